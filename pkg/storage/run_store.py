"""
Run directory management.

Layout under the output directory:

    config.txt           resolved key=value configuration
    reports.jsonl        one EpochReport per line, flushed after every epoch
    labels.txt           last pseudo-label assignment
    checkpoint/          encoder arrays, Adam moments and agents as binary
                         matrices plus checkpoint.json (epoch, Adam step,
                         RNG state, encoder spec)
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import IO, Any, Iterable, Optional, Union

import numpy as np

from core.dto.assignment import ClusterAssignment
from core.dto.report import EpochReport
from core.errors import FormatError, StorageError
from core.membank import FeatureAgentBank
from models.encoder import EncoderParams, EncoderSpec, Pooling
from models.optim import AdamState
from storage.matrix_store import load_matrix, save_labels, save_matrix

logger = logging.getLogger(__name__)

REPORTS_FILENAME = "reports.jsonl"
CONFIG_FILENAME = "config.txt"
LABELS_FILENAME = "labels.txt"
CHECKPOINT_DIRNAME = "checkpoint"
CHECKPOINT_META = "checkpoint.json"


@dataclass
class Checkpoint:
    """Everything needed to continue training after `epoch` completed epochs."""

    epoch: int
    params: EncoderParams
    rng_state: dict[str, Any]
    bank: Optional[FeatureAgentBank] = None


class RunStore:
    """Owns the files of one run.

    Usage:
        with RunStore(out_dir) as store:
            store.write_config(lines)
            store.append_report(report)
            store.save_checkpoint(checkpoint)

    With resume=True the existing reports file is appended to instead of
    being truncated.
    """

    def __init__(self, out_dir: Union[str, Path], resume: bool = False):
        self.out_dir = Path(out_dir)
        self.resume = resume
        self._reports: Optional[IO[str]] = None

    @property
    def reports_path(self) -> Path:
        return self.out_dir / REPORTS_FILENAME

    @property
    def checkpoint_dir(self) -> Path:
        return self.out_dir / CHECKPOINT_DIRNAME

    def open(self):
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            mode = "a" if self.resume else "w"
            self._reports = open(self.reports_path, mode, encoding="utf-8")
        except OSError as e:
            raise StorageError(f"Cannot open run directory ({e.strerror or e})", self.out_dir) from e

    def close(self):
        if self._reports:
            self._reports.close()
            self._reports = None

    def __enter__(self):
        self.open()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        # reports already written stay on disk even when the run failed
        self.close()

    def append_report(self, report: EpochReport) -> None:
        if self._reports is None:
            self.open()
        try:
            self._reports.write(json.dumps(report.to_dict()) + "\n")
            self._reports.flush()
        except OSError as e:
            raise StorageError(f"Cannot append report ({e.strerror or e})", self.reports_path) from e

    def read_reports(self) -> list[EpochReport]:
        return read_reports(self.reports_path)

    def write_config(self, lines: Iterable[str]) -> Path:
        path = self.out_dir / CONFIG_FILENAME
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            path.write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")
        except OSError as e:
            raise StorageError(f"Cannot write config ({e.strerror or e})", path) from e
        return path

    def save_assignment(self, assignment: ClusterAssignment) -> Path:
        path = self.out_dir / LABELS_FILENAME
        save_labels(path, assignment.labels)
        return path

    def has_checkpoint(self) -> bool:
        return (self.checkpoint_dir / CHECKPOINT_META).exists()

    def save_checkpoint(self, checkpoint: Checkpoint) -> Path:
        """Write array files first and the metadata last."""
        directory = self.checkpoint_dir
        params = checkpoint.params
        state = params.optimizer_state
        names = sorted(params.arrays())
        for name, array in params.arrays().items():
            save_matrix(directory / f"{name}.bin", np.atleast_2d(array))
        for name, moment in state.first_moment.items():
            save_matrix(directory / f"adam_m_{name}.bin", np.atleast_2d(moment))
        for name, moment in state.second_moment.items():
            save_matrix(directory / f"adam_v_{name}.bin", np.atleast_2d(moment))
        if checkpoint.bank is not None:
            save_matrix(directory / "agents.bin", checkpoint.bank.agents)

        spec = asdict(params.spec)
        spec["pooling"] = params.spec.pooling.value
        meta = {
            "epoch": checkpoint.epoch,
            "encoder_spec": spec,
            "arrays": names,
            "adam": {
                "step": state.step,
                "lr": state.lr,
                "weight_decay": state.weight_decay,
                "beta1": state.beta1,
                "beta2": state.beta2,
                "epsilon": state.epsilon,
                "no_decay": list(state.no_decay),
                "moments": sorted(state.first_moment),
            },
            "rng_state": checkpoint.rng_state,
            "bank": None
            if checkpoint.bank is None
            else {
                "momentum": checkpoint.bank.momentum,
                "temperature": checkpoint.bank.temperature,
            },
        }
        path = directory / CHECKPOINT_META
        try:
            path.write_text(json.dumps(meta, indent=2), encoding="utf-8")
        except OSError as e:
            raise StorageError(f"Cannot write checkpoint ({e.strerror or e})", path) from e
        logger.info(f"Checkpoint after epoch {checkpoint.epoch} written to {directory}")
        return path

    def load_checkpoint(self) -> Checkpoint:
        directory = self.checkpoint_dir
        path = directory / CHECKPOINT_META
        try:
            meta = json.loads(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise StorageError(f"Cannot read checkpoint ({e.strerror or e})", path) from e
        except UnicodeDecodeError as e:
            raise FormatError(
                f"Checkpoint metadata is not valid UTF-8: {e.reason}", path=path, offset=e.start
            ) from e
        except json.JSONDecodeError as e:
            raise FormatError(f"Corrupt checkpoint metadata: {e.msg}", path=path, line=e.lineno) from e

        spec_fields = dict(meta["encoder_spec"])
        spec_fields["pooling"] = Pooling(spec_fields["pooling"])
        spec = EncoderSpec(**spec_fields)

        def restore(name: str, prefix: str = "") -> np.ndarray:
            array = load_matrix(directory / f"{prefix}{name}.bin")
            # vectors were stored as 1-row matrices
            return array.reshape(-1) if name == "gem_exponents" else array

        adam = meta["adam"]
        state = AdamState(
            step=adam["step"],
            first_moment={n: restore(n, "adam_m_") for n in adam["moments"]},
            second_moment={n: restore(n, "adam_v_") for n in adam["moments"]},
            lr=adam["lr"],
            weight_decay=adam["weight_decay"],
            beta1=adam["beta1"],
            beta2=adam["beta2"],
            epsilon=adam["epsilon"],
            no_decay=tuple(adam["no_decay"]),
        )
        arrays = {name: restore(name) for name in meta["arrays"]}
        params = EncoderParams(
            spec=spec,
            weights=arrays["weights"],
            hidden_weights=arrays.get("hidden_weights"),
            gem_exponents=arrays.get("gem_exponents"),
            optimizer_state=state,
        )

        bank = None
        if meta.get("bank") is not None:
            bank = FeatureAgentBank(
                agents=load_matrix(directory / "agents.bin"),
                momentum=meta["bank"]["momentum"],
                temperature=meta["bank"]["temperature"],
            )
        return Checkpoint(
            epoch=meta["epoch"], params=params, rng_state=meta["rng_state"], bank=bank
        )


def read_reports(path: Union[str, Path]) -> list[EpochReport]:
    """Parse a JSON-lines report file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise StorageError(f"Cannot read reports ({e.strerror or e})", path) from e
    except UnicodeDecodeError as e:
        raise FormatError(
            f"Reports are not valid UTF-8: {e.reason}", path=path, offset=e.start
        ) from e
    reports = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            reports.append(EpochReport.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as e:
            raise FormatError(f"Bad report line: {e}", path=path, line=number) from e
    return reports
