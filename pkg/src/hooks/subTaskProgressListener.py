from typing import Dict, Union

from src.hooks.progressListener import ProgressListener

class SubTaskProgressListener(ProgressListener):
    """
    Reports the progress of one member of a multi-seed run or ablation suite to the listener of the whole task.
    Parameters
    ----------
    base_task_listener : ProgressListener
        The listener of the whole task.
    base_task_total : float
        The total progress reported to the base listener.
    sub_task_start : float
        Where this member starts, in units of the base task.
    sub_task_total : float
        How much of the base task this member covers.
    """
    def __init__(
        self,
        base_task_listener: ProgressListener,
        base_task_total: float,
        sub_task_start: float,
        sub_task_total: float,
    ):
        self.base_task_listener = base_task_listener
        self.base_task_total = base_task_total
        self.sub_task_start = sub_task_start
        self.sub_task_total = sub_task_total

    def on_progress(self, current: Union[int, float], total: Union[int, float]):
        sub_task_progress_frac = current / total if total else 1.0
        sub_task_progress = self.sub_task_start + self.sub_task_total * sub_task_progress_frac
        self.base_task_listener.on_progress(sub_task_progress, self.base_task_total)

    def on_metrics(self, iteration: int, components: Dict[str, float]):
        self.base_task_listener.on_metrics(iteration, components)

    def on_finished(self):
        self.base_task_listener.on_progress(self.sub_task_start + self.sub_task_total, self.base_task_total)
