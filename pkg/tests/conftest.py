import numpy as np
import pytest

from hemtriage.slicemodel import SliceClassifier
from hemtriage.volume import DEFAULT_WINDOWS, CtVolume, ScanLabels, stack_channels


def make_volume(scan_id="s0", patient_id="p0", num_slices=3, height=4, width=4,
                fill=0, labels=None, seed=None):
    if seed is None:
        slices = np.full((num_slices, height, width), fill, dtype=np.int16)
    else:
        rng = np.random.default_rng(seed)
        slices = rng.integers(-100, 101, size=(num_slices, height, width)).astype(np.int16)
    return CtVolume(scan_id=scan_id, patient_id=patient_id, slices=slices,
                    slice_thickness_mm=5.0, labels=labels)


def labels_from_matrix(matrix):
    return ScanLabels.from_slice_matrix(np.asarray(matrix, dtype=bool))


class ConstantClassifier(SliceClassifier):
    def __init__(self, vector, name="constant"):
        self.vector = np.asarray(vector, dtype=np.float64)
        self._name = name

    @property
    def identity(self):
        return self._name

    def classify(self, image, position=0.5):
        return self.vector.copy()


class MemorizingClassifier(SliceClassifier):
    """Leakage sentinel: perfect on byte-identical training slices, clueless
    (constant 0.5) elsewhere. Keys on the windowed image, which is a
    deterministic function of the HU slice."""

    def __init__(self, volumes, specs=DEFAULT_WINDOWS):
        self.memory = {}
        for volume in volumes:
            matrix = volume.labels.slice_labels
            for index in range(volume.num_slices):
                key = stack_channels(volume.slices[index], specs).tobytes()
                self.memory[key] = matrix[index].astype(float)

    @property
    def identity(self):
        return "memorizer"

    def classify(self, image, position=0.5):
        return self.memory.get(np.asarray(image, dtype=np.float64).tobytes(),
                               np.full(5, 0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
