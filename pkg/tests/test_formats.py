import struct

import numpy as np
import pytest

from ppgpair.errors import DataError
from ppgpair.formats import ManifestRow, read_manifest, read_ppgs, read_ppgs_header, write_manifest, write_ppgs


def test_ppgs_layout(tmp_path):
    path = tmp_path / "x.ppgs"
    write_ppgs(path, [1.0, -2.5, 3.25], 240)
    raw = path.read_bytes()
    assert raw[:4] == b"PPGS"
    assert struct.unpack("<HIQ", raw[4:18]) == (1, 240, 3)
    assert np.frombuffer(raw[18:], "<f4").tolist() == [1.0, -2.5, 3.25]
    assert read_ppgs_header(path) == (240, 3)


def test_ppgs_partial_read(tmp_path):
    path = tmp_path / "x.ppgs"
    write_ppgs(path, np.arange(10.0), 40)
    series = read_ppgs(path, 3, 4)
    assert series.samples.tolist() == [3, 4, 5, 6] and series.sample_rate_hz == 40


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<H", 2) + b[6:],
    lambda b: b[:-2],
])
def test_ppgs_rejects_bad_files(tmp_path, mutate):
    path = tmp_path / "x.ppgs"
    write_ppgs(path, np.arange(4.0), 40)
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(DataError):
        read_ppgs(path)


def test_manifest_round_trip(tmp_path):
    rows = [ManifestRow("a", "p", 0.0, 0.0, "s.ppgs", 0, 1200), ManifestRow("b", "p", 30.0, 0.25, "s.ppgs", 1200, 1200)]
    write_manifest(tmp_path / "m.csv", rows)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == \
        "segment_id,patient_id,t_start_s,quality_y,file,offset_samples,n_samples"
    assert read_manifest(tmp_path / "m.csv") == rows


@pytest.mark.parametrize("body", [
    "a,p,0,0,f,0,10\na,p,30,0,f,10,10\n",
    "a,p,0,1.5,f,0,10\n",
    "a,p,-1,0,f,0,10\n",
    "a,p,zero,0,f,0,10\n",
])
def test_manifest_rejects_defects(tmp_path, body):
    path = tmp_path / "m.csv"
    path.write_text("segment_id,patient_id,t_start_s,quality_y,file,offset_samples,n_samples\n" + body)
    with pytest.raises(DataError):
        read_manifest(path)
