import json

import pytest

from fscil_tricks.errors import ConfigError, DataError
from fscil_tricks.metrics import session_result_from_predictions
from fscil_tricks.records import ExperimentRecord, load_record, write_record


def _record():
    sessions = [
        session_result_from_predictions([0, 1], [0, 1], [0, 1], [0, 1], 0),
        session_result_from_predictions([0, 1, 2], [0, 1, 1], [0, 1, 2], [0, 1], 1),
    ]
    return ExperimentRecord(
        run_id="abc-seed0",
        config_hash="deadbeef",
        seed=0,
        toggles={"supcon": True},
        stage_info={"base": {"losses": ["supcon"]}},
        sessions=sessions,
        geometry=[],
    )


class TestRecord:
    def test_roundtrip_via_disk(self, tmp_path):
        rec = _record()
        write_record(rec, tmp_path)
        back = load_record(tmp_path)
        assert back.to_json() == rec.to_json()
        assert back.final_accuracy == rec.final_accuracy

    def test_schema_version_mismatch_refused(self, tmp_path):
        rec = _record()
        path = write_record(rec, tmp_path)
        data = json.loads(path.read_text())
        data["schema_version"] = "0"
        path.write_text(json.dumps(data))
        with pytest.raises(ConfigError):
            load_record(tmp_path)

    def test_missing_record_errors(self, tmp_path):
        with pytest.raises(DataError):
            load_record(tmp_path)

    def test_json_is_deterministic(self):
        assert _record().to_json() == _record().to_json()
