from typing import Dict, Union

import tqdm

from src.hooks.progressListener import ProgressListener

# Components shown next to the bar
POSTFIX_KEYS = ["total", "l_ce", "l_cons", "l_disc"]

class TqdmProgressListener(ProgressListener):
    def __init__(self, desc: str = "Training", disable: bool = False):
        self.desc = desc
        self.disable = disable
        self._bar = None

    def on_progress(self, current: Union[int, float], total: Union[int, float]):
        if self._bar is None:
            self._bar = tqdm.tqdm(total=total, desc=self.desc, disable=self.disable, dynamic_ncols=True)

        self._bar.update(current - self._bar.n)

    def on_metrics(self, iteration: int, components: Dict[str, float]):
        if self._bar is not None:
            self._bar.set_postfix({ key: f"{components[key]:.4f}" for key in POSTFIX_KEYS if key in components }, refresh=False)

    def on_finished(self):
        if self._bar is not None:
            self._bar.close()
            self._bar = None
