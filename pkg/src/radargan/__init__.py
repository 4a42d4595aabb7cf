"""Point-cloud scene synthesis with a set-network GAN.

Subpackages/modules: ``geom`` (point-set kernels), ``nn`` (autodiff and
layers), ``model`` (generator/discriminators), ``train`` (GAN loop and
checkpoints), ``data`` (scene files and test-set builders), ``cli``.
"""

__version__ = "0.1.0"
