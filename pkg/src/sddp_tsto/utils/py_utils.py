import logging
import os
from typing import Optional

from sddp_tsto.errors import InvalidParameter


logger = logging.getLogger(__name__)

THREADS_ENV_VAR = "SDDP_TSTO_THREADS"


def logical_cpu_core_count():
    """Returns the number of logical CPU cores available to the process."""
    num_cpus = os.getenv("SLURM_CPUS_ON_NODE", None)
    if num_cpus is not None:
        return int(num_cpus)

    try:
        return os.cpu_count() or 1
    except NotImplementedError:
        return 1


def resolve_thread_count(threads: Optional[int]) -> int:
    """
    Explicit setting wins, then $SDDP_TSTO_THREADS, then 1. Results never depend on this number, only wall time does.
    """
    if threads is None:
        env = os.getenv(THREADS_ENV_VAR)
        if env is None or env.strip() == "":
            return 1
        try:
            threads = int(env)
        except ValueError:
            raise InvalidParameter(f"{THREADS_ENV_VAR} must be an integer, got {env!r}")

    if threads < 1:
        raise InvalidParameter(f"threads must be >= 1, got {threads}")

    cores = logical_cpu_core_count()
    if threads > cores:
        logger.warning(f"Requested {threads} threads but only {cores} cores are available. Using {cores}.")
        threads = cores

    return threads
