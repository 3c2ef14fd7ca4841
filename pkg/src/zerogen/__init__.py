"""Guided decoding engine: token-level keyword priors and sentence-level
control-payload scoring over contrastive search, with word-level dynamic
weighting."""

__version__ = "0.1.0"

from .core import (DecoderConfig, GenerationState, StepWeights, TextualControl,
                   VisualControl, Vocabulary, config_to_text, load_config,
                   load_preset, parse_config, validate_config)
from .decoder import (GenerationSession, StepTrace, check_trace_invariants,
                      degeneration_penalty, generate, simctg_score,
                      step_trace_to_dict, write_trace_jsonl)
from .errors import BridgeProtocolError, ConfigError, OracleError, ZeroGenError
from .metrics import (EvalReport, control_similarity, distinct_n,
                      keyword_hit_rate, perplexity)
from .oracles import (BaseLM, EmbeddingTable, MultimodalOracle, NGramToyLM,
                      OracleSet, TableMultimodalOracle, TableTextualOracle,
                      TextualOracle, cosine, load_corpus, load_embedding_table,
                      resolve_visual_control, save_embedding_table,
                      toy_embed_text, toy_representation)
from .textual import (ControlVector, SimilarityMatrix, build_similarity_matrix,
                      load_matrix_cache, matrix_cache_key, save_matrix_cache,
                      select_control, shift_distribution)
from .visual import (CandidateSet, SequenceEmbedCache, candidate_set,
                     candidate_softmax, combined_candidate_scores,
                     joint_similarity, magic_term)
from .weighting import (WordControlSimCache, amplify_weight, compute_alpha,
                        compute_beta, select_keyword_subset)

__all__ = [name for name in dir() if not name.startswith("_")]
