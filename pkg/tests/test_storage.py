"""
Tests for matrix/label files and the run directory.
"""

import struct

import numpy as np
import pytest


class TestMatrixFiles:
    """Binary and CSV matrices."""

    def test_hand_built_binary(self, tmp_path):
        from storage.matrix_store import load_matrix

        values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.5]
        payload = b"UFCL" + struct.pack("<III", 1, 3, 2) + struct.pack("<6d", *values)
        path = tmp_path / "m.bin"
        path.write_bytes(payload)
        np.testing.assert_array_equal(load_matrix(path), np.array(values).reshape(3, 2))

    def test_binary_layout(self):
        from storage.matrix_store import HEADER_BYTES, matrix_to_bytes

        data = matrix_to_bytes([[1.0, -2.0]])
        assert data[:4] == b"UFCL"
        assert struct.unpack("<III", data[4:16]) == (1, 1, 2)
        assert len(data) == HEADER_BYTES + 16

    def test_binary_round_trip(self, tmp_path):
        from storage.matrix_store import load_matrix, save_matrix

        X = np.random.default_rng(0).standard_normal((7, 3))
        save_matrix(tmp_path / "x.bin", X)
        np.testing.assert_array_equal(load_matrix(tmp_path / "x.bin"), X)

    def test_bad_magic(self):
        from core.errors import FormatError
        from storage.matrix_store import matrix_from_bytes

        with pytest.raises(FormatError) as e:
            matrix_from_bytes(b"NOPE" + bytes(12))
        assert e.value.offset == 0

    def test_truncated_payload(self):
        from core.errors import FormatError
        from storage.matrix_store import matrix_from_bytes, matrix_to_bytes

        data = matrix_to_bytes(np.ones((2, 2)))
        with pytest.raises(FormatError) as e:
            matrix_from_bytes(data[:-8])
        assert e.value.offset == len(data) - 8

    def test_truncated_header(self):
        from core.errors import FormatError
        from storage.matrix_store import matrix_from_bytes

        with pytest.raises(FormatError) as e:
            matrix_from_bytes(b"UFCL\x01")
        assert e.value.offset == 5

    def test_unknown_version(self):
        from core.errors import FormatError
        from storage.matrix_store import matrix_from_bytes

        with pytest.raises(FormatError):
            matrix_from_bytes(b"UFCL" + struct.pack("<III", 2, 0, 0))

    def test_csv_round_trip(self, tmp_path):
        from storage.matrix_store import load_embeddings, save_embeddings

        X = np.random.default_rng(1).standard_normal((4, 5))
        save_embeddings(tmp_path / "x.csv", X)
        assert (tmp_path / "x.csv").read_text().count("\n") == 4
        np.testing.assert_array_equal(load_embeddings(tmp_path / "x.csv"), X)

    def test_ragged_csv(self, tmp_path):
        from core.errors import FormatError
        from storage.matrix_store import load_csv

        path = tmp_path / "bad.csv"
        path.write_text("1,2,3\n4,5,6\n7,8\n")
        with pytest.raises(FormatError) as e:
            load_csv(path)
        assert e.value.line == 3

    def test_non_numeric_csv(self, tmp_path):
        from core.errors import FormatError
        from storage.matrix_store import load_csv

        path = tmp_path / "bad.csv"
        path.write_text("1,2\nx,3\n")
        with pytest.raises(FormatError) as e:
            load_csv(path)
        assert e.value.line == 2

    def test_csv_not_utf8(self, tmp_path):
        from core.errors import FormatError
        from storage.matrix_store import load_embeddings

        path = tmp_path / "bad.csv"
        path.write_bytes(b"1.0,2.0\n\xff\xfe,3.0\n")
        with pytest.raises(FormatError) as e:
            load_embeddings(path)
        assert e.value.offset == 8
        assert e.value.path == path

    def test_missing_file(self, tmp_path):
        from core.errors import StorageError
        from storage.matrix_store import load_matrix

        with pytest.raises(StorageError):
            load_matrix(tmp_path / "absent.bin")

    def test_explicit_format_overrides_suffix(self, tmp_path):
        from storage.matrix_store import load_embeddings, save_embeddings

        save_embeddings(tmp_path / "x.txt", [[1.5, 2.5]], fmt="csv")
        assert (tmp_path / "x.txt").read_text() == "1.5,2.5\n"
        np.testing.assert_array_equal(load_embeddings(tmp_path / "x.txt", fmt="csv"), [[1.5, 2.5]])


class TestLabelFiles:
    """Label files."""

    def test_round_trip_with_outliers(self, tmp_path):
        from storage.matrix_store import load_labels, save_labels

        save_labels(tmp_path / "labels.txt", [0, -1, 2, 1])
        assert (tmp_path / "labels.txt").read_text() == "0\n-1\n2\n1\n"
        assert load_labels(tmp_path / "labels.txt").tolist() == [0, -1, 2, 1]

    def test_length_checked(self, tmp_path):
        from core.errors import FormatError
        from storage.matrix_store import load_labels, save_labels

        save_labels(tmp_path / "labels.txt", [0, 1, 1])
        with pytest.raises(FormatError):
            load_labels(tmp_path / "labels.txt", expected_length=4)

    def test_non_integer(self, tmp_path):
        from core.errors import FormatError
        from storage.matrix_store import load_labels

        path = tmp_path / "labels.txt"
        path.write_text("0\n1.5\n")
        with pytest.raises(FormatError) as e:
            load_labels(path)
        assert e.value.line == 2

    def test_labels_not_utf8(self, tmp_path):
        from core.errors import FormatError
        from storage.matrix_store import load_labels

        path = tmp_path / "labels.txt"
        path.write_bytes(b"0\n\xff\n")
        with pytest.raises(FormatError) as e:
            load_labels(path)
        assert e.value.offset == 2


class TestRunStore:
    """RunStore."""

    def test_reports_append_and_read(self, tmp_path):
        from core.dto.report import EpochReport
        from storage.run_store import RunStore

        first = EpochReport(epoch=0, num_clusters=3, num_outliers=1, acc=0.5, mean_loss=1.25)
        second = EpochReport(epoch=1, num_clusters=2, num_outliers=0)
        with RunStore(tmp_path) as store:
            store.append_report(first)
        with RunStore(tmp_path, resume=True) as store:
            store.append_report(second)
            assert store.read_reports() == [first, second]

    def test_fresh_store_truncates_reports(self, tmp_path):
        from core.dto.report import EpochReport
        from storage.run_store import RunStore, read_reports

        with RunStore(tmp_path) as store:
            store.append_report(EpochReport(epoch=0, num_clusters=1, num_outliers=0))
        with RunStore(tmp_path):
            pass
        assert read_reports(tmp_path / "reports.jsonl") == []

    def test_report_line_order(self, tmp_path):
        import json

        from core.dto.report import REPORT_FIELDS, EpochReport
        from storage.run_store import RunStore

        with RunStore(tmp_path) as store:
            store.append_report(EpochReport(epoch=4, num_clusters=2, num_outliers=3, top1=0.75))
        line = (tmp_path / "reports.jsonl").read_text().strip()
        assert list(json.loads(line)) == list(REPORT_FIELDS)

    def test_corrupt_report_line(self, tmp_path):
        from core.errors import FormatError
        from storage.run_store import read_reports

        path = tmp_path / "reports.jsonl"
        path.write_text('{"epoch": 0}\n')
        with pytest.raises(FormatError) as e:
            read_reports(path)
        assert e.value.line == 1

    def test_reports_not_utf8(self, tmp_path):
        from core.errors import FormatError
        from storage.run_store import read_reports

        path = tmp_path / "reports.jsonl"
        path.write_bytes(b"\xc3(\n")
        with pytest.raises(FormatError) as e:
            read_reports(path)
        assert e.value.offset == 0

    def test_write_config(self, tmp_path):
        from storage.run_store import RunStore

        path = RunStore(tmp_path).write_config(["seed=3", "epochs=2"])
        assert path.read_text() == "seed=3\nepochs=2\n"

    @pytest.mark.parametrize("pooling,hidden", [("none", 0), ("gem", 6)])
    def test_checkpoint_round_trip(self, tmp_path, pooling, hidden):
        from core.membank import FeatureAgentBank
        from models.encoder import EncoderSpec, Pooling, init_encoder
        from models.optim import adam_step
        from storage.run_store import Checkpoint, RunStore

        spec = EncoderSpec(
            input_dim=12,
            output_dim=4,
            hidden_dim=hidden,
            pooling=Pooling(pooling),
            tensor_width=2,
            tensor_height=2,
        )
        rng = np.random.default_rng(0)
        params = init_encoder(spec, rng)
        grads = {name: rng.standard_normal(np.shape(a)) for name, a in params.arrays().items()}
        params = adam_step(params, grads)
        agents = np.eye(3, 4)
        bank = FeatureAgentBank(agents=agents, momentum=0.2, temperature=0.05)

        store = RunStore(tmp_path)
        assert not store.has_checkpoint()
        store.save_checkpoint(Checkpoint(epoch=3, params=params, rng_state=rng.bit_generator.state, bank=bank))
        assert store.has_checkpoint()
        restored = store.load_checkpoint()

        assert restored.epoch == 3
        assert restored.params.spec == spec
        for name, array in params.arrays().items():
            np.testing.assert_array_equal(restored.params.arrays()[name], array)
        state, loaded = params.optimizer_state, restored.params.optimizer_state
        assert loaded.step == state.step == 1
        assert loaded.no_decay == state.no_decay
        for name in state.first_moment:
            np.testing.assert_array_equal(loaded.first_moment[name], state.first_moment[name])
            np.testing.assert_array_equal(loaded.second_moment[name], state.second_moment[name])
        np.testing.assert_array_equal(restored.bank.agents, agents)
        assert restored.bank.momentum == 0.2

        replay = np.random.default_rng()
        replay.bit_generator.state = restored.rng_state
        assert replay.random() == rng.random()

    def test_checkpoint_without_bank(self, tmp_path):
        from models.encoder import EncoderSpec, init_encoder
        from storage.run_store import Checkpoint, RunStore

        rng = np.random.default_rng(1)
        params = init_encoder(EncoderSpec(input_dim=3, output_dim=2), rng)
        store = RunStore(tmp_path)
        store.save_checkpoint(Checkpoint(epoch=0, params=params, rng_state=rng.bit_generator.state))
        assert store.load_checkpoint().bank is None

    def test_corrupt_checkpoint_metadata(self, tmp_path):
        from core.errors import FormatError
        from storage.run_store import RunStore

        (tmp_path / "checkpoint").mkdir()
        (tmp_path / "checkpoint" / "checkpoint.json").write_text("{not json")
        with pytest.raises(FormatError):
            RunStore(tmp_path).load_checkpoint()
