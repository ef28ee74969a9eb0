"""
Текстовый формат траекторий и матричные документы.
"""

import numpy as np
import pytest

from shared.models.errors import ParseError, SchemaError
from shared.models.storage import TRAJECTORY_MAGIC, load_dataset, save_dataset
from shared.models.trajectory import (
    ControlVariable,
    Dataset,
    Demonstration,
    Frame,
    SubjectMeta,
    SubjectRecord,
)
from shared.utils.matrix_text import MatrixDocument, read_document, write_document

SUBJECT_LINE = "subject,1,30,male,1.7,70,{bmi!r}".format(bmi=70 / 1.7 ** 2)
FRAME_TAIL = "1,0,0,0,0,0,5,0,0,0,,"


def _control(rng):
    q = rng.normal(size=4)
    return ControlVariable.unflatten(np.concatenate([q / np.linalg.norm(q), rng.normal(size=6)]))


def _dataset(rng, with_images=True):
    meta = SubjectMeta(id=7, age=41.0, gender="female", height=1.63, weight=58.5)
    frames = []
    for i in range(3):
        image = rng.integers(0, 256, size=(224, 224)) / 255.0 if with_images else None
        frames.append(Frame(timestamp=0.1 * i, w=_control(rng), image=image,
                            features=tuple(rng.normal(size=40))))
    return Dataset((SubjectRecord(meta, (Demonstration(tuple(frames)),)),))


def _write_subject(tmp_path, *lines):
    (tmp_path / "subject_001.traj").write_text("\n".join([TRAJECTORY_MAGIC, *lines]) + "\n", encoding="utf-8")
    return tmp_path


def test_roundtrip_is_exact(tmp_path, rng):
    ds = _dataset(rng)
    save_dataset(ds, tmp_path)
    assert (tmp_path / "subject_007.traj").exists()
    assert len(list((tmp_path / "images").glob("*.raw"))) == 3
    assert load_dataset(tmp_path) == ds


def test_roundtrip_without_images(tmp_path, rng):
    ds = _dataset(rng, with_images=False)
    save_dataset(ds, tmp_path)
    loaded = load_dataset(tmp_path)
    assert loaded == ds
    assert not loaded.has_images()
    assert loaded.has_features()


def test_save_replaces_previous_dataset(tmp_path, rng):
    _write_subject(tmp_path, SUBJECT_LINE, "demo,0", "frame,0," + FRAME_TAIL, "frame,0.1," + FRAME_TAIL)
    (tmp_path / "images").mkdir()
    (tmp_path / "images" / "s001_d00_f00000.raw").write_bytes(b"\0" * 10)

    ds = _dataset(rng)
    save_dataset(ds, tmp_path)
    assert not (tmp_path / "subject_001.traj").exists()
    assert len(list((tmp_path / "images").glob("*.raw"))) == 3
    assert load_dataset(tmp_path) == ds


def test_non_monotone_timestamps(tmp_path):
    path = _write_subject(tmp_path, SUBJECT_LINE, "demo,0", "frame,0.5," + FRAME_TAIL, "frame,0.5," + FRAME_TAIL)
    with pytest.raises(SchemaError):
        load_dataset(path)


def test_wrong_node_dimension(tmp_path):
    features = ";".join(["0.5"] * 39)
    path = _write_subject(tmp_path, SUBJECT_LINE, "demo,0",
                          "frame,0.0,1,0,0,0,0,0,5,0,0,0,," + features,
                          "frame,0.1,1,0,0,0,0,0,5,0,0,0,," + features)
    with pytest.raises(SchemaError):
        load_dataset(path)


def test_parse_error_reports_line(tmp_path):
    path = _write_subject(tmp_path, SUBJECT_LINE, "demo,0", "frame,abc," + FRAME_TAIL)
    with pytest.raises(ParseError) as info:
        load_dataset(path)
    assert info.value.line == 4
    assert "subject_001.traj:4" in str(info.value)


def test_bmi_mismatch(tmp_path):
    path = _write_subject(tmp_path, "subject,1,30,male,1.7,70,30.0", "demo,0",
                          "frame,0.0," + FRAME_TAIL, "frame,0.1," + FRAME_TAIL)
    with pytest.raises(SchemaError):
        load_dataset(path)


def test_missing_header(tmp_path):
    (tmp_path / "subject_001.traj").write_text(SUBJECT_LINE + "\n", encoding="utf-8")
    with pytest.raises(ParseError):
        load_dataset(tmp_path)


def test_empty_directory(tmp_path):
    with pytest.raises(ParseError):
        load_dataset(tmp_path)


def test_matrix_document_roundtrip(tmp_path, rng):
    matrix = rng.normal(size=(3, 5))
    write_document(tmp_path / "doc.txt", MatrixDocument("TEST", 1, {"k": "v"}, {"m": matrix}))
    doc = read_document(tmp_path / "doc.txt", "TEST")
    assert doc.scalar("k") == "v"
    np.testing.assert_array_equal(doc.matrix("m"), matrix)


def test_matrix_document_wrong_magic(tmp_path):
    write_document(tmp_path / "doc.txt", MatrixDocument("TEST", 1))
    with pytest.raises(ParseError):
        read_document(tmp_path / "doc.txt", "OTHER")


def test_matrix_document_unsupported_version(tmp_path):
    write_document(tmp_path / "doc.txt", MatrixDocument("TEST", 2))
    with pytest.raises(ParseError):
        read_document(tmp_path / "doc.txt", "TEST")
