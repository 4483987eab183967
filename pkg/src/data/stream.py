from itertools import chain, count
from typing import Iterator, List, Sequence, Tuple

import numpy as np
from more_itertools import chunked

from src.core import Batch
from src.data.augment import AugmentOptions, augment_samples
from src.data.dataset import SegmentationDataset

# Independent random streams per role
ROLE_STREAMS = {
    "labeled": 0,
    "unlabeled": 1,
}
AUGMENT_STREAM = 2

class BatchStream:
    """
    Endless sequence of id batches. Epoch e visits the ids in an order drawn from (seed, role, e),
    so the stream is the same on every run and can be restarted at any batch index.
    """
    def __init__(self, ids: Sequence[int], batch_size: int, seed: int, role: str):
        if len(ids) == 0:
            raise ValueError(f"Cannot stream an empty {role} set")
        if role not in ROLE_STREAMS:
            raise ValueError(f"Unknown stream role {role}")

        self.ids = np.asarray(ids, dtype=np.int64)
        self.batch_size = batch_size
        self.seed = seed
        self.role = role

    def epoch_order(self, epoch: int) -> List[int]:
        rng = np.random.default_rng([self.seed, ROLE_STREAMS[self.role], epoch])
        return [ int(i) for i in rng.permutation(self.ids) ]

    def __iter__(self) -> Iterator[List[int]]:
        return iter(chunked(chain.from_iterable(self.epoch_order(epoch) for epoch in count()), self.batch_size))

    def batches(self, start: int = 0) -> Iterator[Tuple[int, List[int]]]:
        """
        (batch index, ids) pairs starting at the given batch index.
        """
        for index, ids in enumerate(self):
            if index >= start:
                yield index, ids

class BatchLoader:
    """
    Turns a BatchStream into augmented Batches. The augmentation of batch k only depends on (seed, role, k).
    """
    def __init__(self, dataset: SegmentationDataset, stream: BatchStream, options: AugmentOptions, labeled: bool):
        self.dataset = dataset
        self.stream = stream
        self.options = options
        self.labeled = labeled

    def make_batch(self, index: int, ids: List[int]) -> Batch:
        rng = np.random.default_rng([self.stream.seed, ROLE_STREAMS[self.stream.role], AUGMENT_STREAM, index])
        samples = []

        for i in ids:
            image, label_map = self.dataset[i]
            samples.append((image, label_map if self.labeled else None))

        images, labels = augment_samples(samples, rng, self.options)
        return Batch(images, labels=labels, labeled=self.labeled, ids=list(ids))

    def batches(self, start: int = 0) -> Iterator[Batch]:
        for index, ids in self.stream.batches(start):
            yield self.make_batch(index, ids)
