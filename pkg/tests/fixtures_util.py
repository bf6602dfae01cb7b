import json
from importlib import resources

from trialemu.records import read_notes


def shipped_corpus():
    """The note fixtures bundled with the package and their sidecar labels."""
    base = resources.files("trialemu").joinpath("fixtures/notes")
    notes = read_notes(base.joinpath("notes.jsonl"))
    with base.joinpath("sidecar_labels.jsonl").open(encoding="utf-8") as fh:
        labels = [json.loads(line) for line in fh if line.strip()]
    return notes, labels
