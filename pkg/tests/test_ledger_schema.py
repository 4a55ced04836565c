import json
from importlib import resources

import jsonschema
import pytest

from evogen.history import read_ledger
from evogen.runner import RunConfig, run

from conftest import write_donor, write_initial_system


@pytest.fixture(scope="module")
def schema():
    text = resources.files("evogen").joinpath(
        "schemas/ledger.schema.json").read_text()
    data = json.loads(text)
    jsonschema.Draft7Validator.check_schema(data)
    return data


def test_generated_ledger_conforms(tmp_path, schema):
    system = write_initial_system(tmp_path / "in")
    donor = write_donor(tmp_path / "donors", "widget")
    out = tmp_path / "out"
    run(RunConfig(max_iterations=25, seed=11), system, [donor], out)
    records = read_ledger(out)
    assert records
    validator = jsonschema.Draft7Validator(schema)
    for record in records:
        validator.validate(record)
    kinds = {r["kind"] for r in records}
    assert kinds  # at least one operation kind was exercised


def test_truncation_marker_conforms(schema):
    jsonschema.Draft7Validator(schema).validate(
        {"schema": 1, "kind": "Truncated", "reason": "disk full"})


def test_garbage_rejected(schema):
    validator = jsonschema.Draft7Validator(schema)
    for bad in ({}, {"schema": 1, "kind": "Nope"},
                {"schema": 2, "kind": "Truncated", "reason": "x"}):
        with pytest.raises(jsonschema.ValidationError):
            validator.validate(bad)
