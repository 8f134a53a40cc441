"""Desk-scale toolkit for adapter ensembling, quantization prep, constrained
decoding, answer parsing, and competition-style scoring."""

__version__ = "0.1.0"

from .adapters import LoraAdapter, MergePlan, MergeStep, execute_merge, wise_ft_rescale
from .archive import Tensor, TensorArchive, read_archive, write_archive
from .metrics import GoldAnswer, MetricReport, evaluate_answers, rank_sum
from .parsing import ParseOutcome, parse
from .processors import LogitsProcessorChain, Vocab, chain_from_config
from .quant import QuantConfig, QuantizedTensor, dequantize, pad_for_groups, quantize_groupwise
from .router import Question, TaskType, build_prompt, route
from .toylm import ToyLM, ToyTokenizer, greedy_decode

__all__ = [
    "LoraAdapter", "MergePlan", "MergeStep", "execute_merge", "wise_ft_rescale",
    "Tensor", "TensorArchive", "read_archive", "write_archive",
    "GoldAnswer", "MetricReport", "evaluate_answers", "rank_sum",
    "ParseOutcome", "parse",
    "LogitsProcessorChain", "Vocab", "chain_from_config",
    "QuantConfig", "QuantizedTensor", "dequantize", "pad_for_groups", "quantize_groupwise",
    "Question", "TaskType", "build_prompt", "route",
    "ToyLM", "ToyTokenizer", "greedy_decode",
]
