"""Tokenizer hot loops, compiled when available.

``BACKEND`` is ``"cython"`` when the extension imported and ``"python"``
otherwise.  Both backends expose the same three functions.
"""

from . import _kernels_py as python_backend

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

bpe_merge_word = _active.bpe_merge_word
bpe_apply_merge = _active.bpe_apply_merge
wordpiece_word = _active.wordpiece_word
