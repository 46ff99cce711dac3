import numpy as np
import pytest

from ppgpair.quality import Quality, artifact_fraction, classify_binary


def test_artifact_fraction():
    assert artifact_fraction([True, False, False, False]) == 0.25
    assert artifact_fraction(np.zeros(10, bool)) == 0.0
    assert artifact_fraction(np.ones(3, bool)) == 1.0


def test_empty_mask_is_an_error():
    with pytest.raises(ValueError):
        artifact_fraction([])


@pytest.mark.parametrize("y, threshold, expected", [
    (0.0, 0.0, Quality.GOOD), (0.01, 0.0, Quality.BAD), (0.1, 0.1, Quality.GOOD), (0.5, 0.2, Quality.BAD),
])
def test_classify_binary(y, threshold, expected):
    assert classify_binary(y, threshold) is expected


def test_classify_rejects_out_of_range():
    with pytest.raises(ValueError):
        classify_binary(1.5)
