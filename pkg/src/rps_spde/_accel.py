# Numba if available and enabled, else plain python/numpy paths.
import logging
import os

logger = logging.getLogger(__name__)


def _env_flag(name, default="1"):
    return os.environ.get(name, default).strip().lower() not in ("0", "false", "no", "off")


try:
    import numba

    HAVE_NUMBA = True
    if not os.environ.get("NUMBA_THREADING_LAYER"):
        # the image ships an old TBB; skip probing it
        numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def null_decorator(pyfunc=None, **kwargs):
    """Stand-in for njit when numba is missing."""
    def wrap(func):
        return func
    return wrap if pyfunc is None else wrap(pyfunc)


if HAVE_NUMBA:
    njit = numba.njit
    prange = numba.prange
else:  # pragma: no cover
    njit = null_decorator

    def prange(*args):
        return range(*args)


def use_numba():
    """True when the compiled kernels should be used.

    Controlled by RPS_SPDE_NUMBA (default on). Read on every call so tests
    and the benchmark can flip it at runtime.
    """
    return HAVE_NUMBA and _env_flag("RPS_SPDE_NUMBA")


def apply_thread_cap():
    n = os.environ.get("RPS_SPDE_THREADS")
    if not n or not HAVE_NUMBA:
        return None
    try:
        cap = max(1, int(n))
    except ValueError:
        logger.warning("ignoring bad RPS_SPDE_THREADS=%r", n)
        return None
    cap = min(cap, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(cap)
    return cap
