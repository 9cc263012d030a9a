"""Zero-shot prompt tuning for node classification on text-attributed graphs.

Pipeline: contrastive graph/text encoder pre-training, a bimodal conditional
generator trained without labels, class-name-conditioned synthetic samples,
and continuous prompt tuning with hybrid graph/text inference.
"""
from .config import RunConfig, default_run_config, load_run_config
from .encoders import (PretrainedModel, TextEncoderConfig, GraphEncoderConfig,
                       Vocabulary, build_vocabulary, tokenize,
                       cosine_similarity_matrix, l2_normalize)
from .harness import (Metrics, ZeroShotTask, evaluate, export_projection, macro_f1,
                      run_discrete, run_node_only, run_pseudo_label,
                      run_simple_classifier, run_template_sweep, run_zpt,
                      sample_tasks, sensitivity_sweep)
from .pretrain import PretrainConfig, alignment_loss, pretrain, summary_embeddings, \
    symmetric_contrastive_loss
from .prompt import (ContinuousPrompt, HybridConfig, class_weights, classify,
                     discrete_class_weights, hybrid_probability, init_prompt, tune_prompt)
from .tag import (SyntheticTagSpec, TextAttributedGraph, generate_synthetic_tag,
                  load_tag, neighbor_sets, save_tag)
from .ubcg import (LatentGaussian, UbcgConfig, UbcgModel, generate_class_samples,
                   kl_standard_normal, parameter_count, reparameterize, train_ubcg,
                   ubcg_loss)

__version__ = "0.1.0"
