"""Multi-task Gaussian-process regression over aggregated observations."""
import jax

# Kernel tolerances and Cholesky factorisations assume double precision.
jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
