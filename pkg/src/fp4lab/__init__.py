"""fp4lab: a desk-scale laboratory for low-precision training noise.

The package has six parts:

- ``fpquant``      simulated 4-bit block-float quantization (encode/decode/fake-quant,
                   stochastic rounding, randomized Hadamard preconditioner)
- ``tensorcore``   a small reverse-mode autodiff engine on float64 numpy arrays
- ``models``       a GPT baseline and a hypersphere (nGPT) transformer built on tensorcore
- ``analysis``     SNR decomposition, effective correlation, and width-scaling predictions
- ``landscape``    loss-landscape perturbation probes and learning-rate sweeps
- ``experiments``  configs, corpora, CSV reports, and the ``lab`` command line
"""

__version__ = "0.1.0"
