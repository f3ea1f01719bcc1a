"""Pin BLAS to one thread before numpy loads so every numeric result,
training log, and report in the suite is bit-reproducible run to run."""

import os

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, "1")
