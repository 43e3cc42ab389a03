import os

import pytest

from src.artifacts import replace_on_success


def test_artifact_appears_only_after_a_clean_exit(tmp_path):
    path = str(tmp_path / "nested" / "out.csv")
    with replace_on_success(path) as temporary:
        with open(temporary, "w", encoding="utf-8") as handle:
            handle.write("a,b\n")
        assert not os.path.exists(path)
    assert open(path, encoding="utf-8").read() == "a,b\n"
    assert os.listdir(tmp_path / "nested") == ["out.csv"]


def test_failed_write_keeps_the_previous_artifact(tmp_path):
    path = str(tmp_path / "out.csv")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("old\n")
    with pytest.raises(RuntimeError):
        with replace_on_success(path) as temporary:
            with open(temporary, "w", encoding="utf-8") as handle:
                handle.write("par")
            raise RuntimeError("interrupted")
    assert open(path, encoding="utf-8").read() == "old\n"
    assert os.listdir(tmp_path) == ["out.csv"]
