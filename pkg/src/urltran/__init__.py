"""Phishing URL detection with transformers.

Subword URL tokenizers, a numpy BERT-style encoder trained by masked-LM
pre-training and classifier fine-tuning, adversarial URL perturbations,
and low-FPR ROC evaluation.
"""

from .corpus import BENIGN, PHISH, Dataset, UrlRecord, load_dataset, save_dataset, split_dataset
from .encoder import ModelConfig, ModelParams, init_params, load_checkpoint, save_checkpoint
from .evaluation import auroc, roc_curve, score_dataset, tpr_at_fpr
from .tokenize import Vocabulary, decode, encode, load_vocab, train_bpe

__version__ = "0.1.0"

__all__ = [
    "BENIGN", "PHISH", "Dataset", "UrlRecord", "load_dataset", "save_dataset", "split_dataset",
    "ModelConfig", "ModelParams", "init_params", "load_checkpoint", "save_checkpoint",
    "auroc", "roc_curve", "score_dataset", "tpr_at_fpr",
    "Vocabulary", "decode", "encode", "load_vocab", "train_bpe",
]
