"""Cross-subject domain adaptation for multichannel pressure time series.

Three-stage pipeline: (1) contrastive representation learning over all
samples, (2) latent-domain discovery from convolutional feature statistics
with GMM + BIC model selection, (3) selective multi-branch adversarial
alignment of the nearest sub-source domains against the target, plus a
leave-one-subject-out evaluation harness and a synthetic generator with
planted ground truth.
"""

__version__ = "0.1.0"
