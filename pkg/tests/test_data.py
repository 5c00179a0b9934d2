import numpy as np
import pytest

from app.data import Dataset, load_default_iris, load_iris
from app.errors import DataError, ParseError

HEADER = "sepal_length,sepal_width,petal_length,petal_width,species\n"


def write_iris(path, versicolor=50, virginica=50, extra=""):
    rows = [HEADER, "5.1,3.5,1.4,0.2,Iris-setosa\n", "\n"]
    rows += ["7.0,3.2,4.7,1.4,Iris-versicolor\n"] * versicolor
    rows += ["\n"]
    rows += ["6.3,3.3,6.0,2.5,virginica\n"] * virginica
    path.write_text("".join(rows) + extra)
    return path


class TestLoadIris:
    def test_reads_and_labels(self, tmp_path):
        dataset = load_iris(write_iris(tmp_path / "iris.csv"))
        assert len(dataset) == 100
        assert dataset.features.shape == (100, 4)
        assert np.bincount(dataset.labels).tolist() == [50, 50]
        np.testing.assert_allclose(dataset.features[0], [7.0, 3.2, 4.7, 1.4])
        assert dataset.labels[0] == 0 and dataset.labels[-1] == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_iris(tmp_path / "absent.csv")

    def test_wrong_class_counts(self, tmp_path):
        with pytest.raises(DataError):
            load_iris(write_iris(tmp_path / "iris.csv", virginica=49))

    def test_bad_row_reports_line(self, tmp_path):
        path = tmp_path / "iris.csv"
        path.write_text(HEADER + "7.0,3.2,4.7,1.4,versicolor\n" + "6.1,abc,4.0,1.3,versicolor\n")
        with pytest.raises(ParseError) as excinfo:
            load_iris(path)
        assert excinfo.value.line == 3

    def test_short_row(self, tmp_path):
        path = tmp_path / "iris.csv"
        path.write_text("7.0,3.2,4.7\n")
        with pytest.raises(ParseError) as excinfo:
            load_iris(path)
        assert excinfo.value.line == 1

    def test_overlong_row_reports_line(self, tmp_path):
        path = tmp_path / "iris.csv"
        path.write_text(HEADER + "7.0,3.2,4.7,1.4,versicolor\n" * 2 + "1,2,3,4,5,6,7,8,9,versicolor\n")
        with pytest.raises(ParseError) as excinfo:
            load_iris(path)
        assert excinfo.value.line == 4

    def test_unknown_species(self, tmp_path):
        path = tmp_path / "iris.csv"
        path.write_text("7.0,3.2,4.7,1.4,daisy\n")
        with pytest.raises(ParseError):
            load_iris(path)


class TestDataset:
    def test_rejects_zero_vector(self):
        with pytest.raises(DataError):
            Dataset(np.array([[1.0, 0, 0, 0], [0.0, 0, 0, 0]]), np.array([0, 1]))

    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            Dataset(np.array([[np.nan, 1.0, 0, 0]]), np.array([0]))

    def test_split_is_seeded(self, iris):
        a, b = iris.split(42), iris.split(42)
        assert a.train_idx == b.train_idx and a.test_idx == b.test_idx
        assert iris.split(43).train_idx != a.train_idx

    def test_split_sizes(self, iris):
        split = iris.split(0)
        assert len(split.train_idx) == 75
        assert len(split.test_idx) == 25
        assert sorted(split.train_idx + split.test_idx) == list(range(100))

    def test_normalized(self):
        dataset = Dataset(np.array([[2.0, -4.0, 1, 1], [1.0, 2.0, 1, 1]]), np.array([0, 1])).normalized()
        np.testing.assert_allclose(dataset.features, [[1.0, -1.0, 1, 1], [0.5, 0.5, 1, 1]])


def test_default_iris_falls_back_to_bundled_copy(monkeypatch):
    from app import data

    monkeypatch.setattr(data, "IRIS_PATH", None)
    dataset = load_default_iris()
    assert len(dataset) == 100
    assert np.bincount(dataset.labels).tolist() == [50, 50]
