import multiprocessing
from typing import Any, Callable, List, Sequence

class ParallelContext:
    """
    Process pool using the spawn start method, so worker processes never inherit torch state from the parent.
    """
    def __init__(self, num_processes: int = None):
        self.num_processes = num_processes
        self.pool = None

    def __enter__(self):
        self.pool = multiprocessing.get_context('spawn').Pool(self.num_processes)
        return self.pool

    def __exit__(self, exc_type, exc_val, exc_tb):
        print("Closing pool of " + str(self.num_processes) + " processes")
        self.pool.close()
        self.pool.join()
        self.pool = None

def run_members(function: Callable[..., Any], members: Sequence[tuple], workers: int = 1) -> List[Any]:
    """
    Call function(*member) for every member, in this process when workers <= 1, otherwise in a pool.
    Results keep the order of members.
    """
    if workers <= 1 or len(members) <= 1:
        return [ function(*member) for member in members ]

    with ParallelContext(num_processes=min(workers, len(members))) as pool:
        return pool.starmap(function, members)
