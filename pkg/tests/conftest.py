import json

import pytest

from config import Config


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    """Run directories under tmp_path, no history recording"""
    root = tmp_path / 'runs'
    monkeypatch.setattr(Config, 'OUTPUT_ROOT', str(root))
    monkeypatch.setattr(Config, 'RECORD_HISTORY', False)
    return root


@pytest.fixture
def write_config(tmp_path):
    def write(name, data):
        path = tmp_path / f'{name}.json'
        path.write_text(json.dumps(data), encoding='utf-8')
        return str(path)

    return write
