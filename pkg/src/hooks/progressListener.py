from typing import Dict, Union

class ProgressListener:
    """
    Receives training progress. on_metrics is called with the logged loss components of an iteration.
    """
    def on_progress(self, current: Union[int, float], total: Union[int, float]):
        self.total = total

    def on_metrics(self, iteration: int, components: Dict[str, float]):
        pass

    def on_finished(self):
        pass

class ProgressListenerHandle:
    def __init__(self, listener: ProgressListener):
        self.listener = listener

    def __enter__(self):
        return self.listener

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is None:
            self.listener.on_finished()

def create_progress_listener_handle(progress_listener: ProgressListener):
    return ProgressListenerHandle(progress_listener)
