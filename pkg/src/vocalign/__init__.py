"""Replace a language model's vocabulary by aligning token IDs through
co-occurrence embeddings."""
__version__ = "0.1.0"

from .adapt import (INIT_METHODS, InitMethod, TrainPlan, distill_finetune, distill_step,
                    first_step_loss, init_target_params, kl_divergence, normalized_perplexity,
                    two_stage_finetune)
from .align import (AlignmentMap, align_vocabs, bleu1, convert_stream, overlap_ratio,
                    semantic_score, shared_tokens, shuffle_alignment)
from .cooccurrence import CoocTable, count_cooc
from .embedding import EmbeddingMatrix
from .glove import GloveConfig, train_glove
from .tokenizer import Tokenizer, TokenStream, compression_rate, load_tokenizer, train_bpe
from .toylm import LmConfig, LmParams, init_params

__all__ = [
    "AlignmentMap", "CoocTable", "EmbeddingMatrix", "GloveConfig", "INIT_METHODS", "InitMethod",
    "LmConfig", "LmParams", "TokenStream", "Tokenizer", "TrainPlan", "align_vocabs", "bleu1",
    "compression_rate", "convert_stream", "count_cooc", "distill_finetune", "distill_step",
    "first_step_loss", "init_params", "init_target_params", "kl_divergence", "load_tokenizer",
    "normalized_perplexity", "overlap_ratio", "semantic_score", "shared_tokens",
    "shuffle_alignment", "train_bpe", "train_glove", "two_stage_finetune",
]
