"""Audio-guided automatic image colorization.

Three-stage self-supervised pipeline: (1) colorization pretraining guided by
color-image scene semantics through a relevance-gated AdaIN site, (2)
distillation of those semantics into an audio encoder, (3) audio-conditioned
fine-tuning of the projection with the backbone frozen. Includes a relevance
network for gating mismatched audio and a synthetic iso-luminant dataset
generator that makes the audio contribution measurable.
"""

__version__ = "0.1.0"
