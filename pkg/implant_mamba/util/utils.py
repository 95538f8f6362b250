"""
Utils
"""
import csv
import dataclasses
import io
import json
import math
import os
import tempfile

from .exceptions import ContractError

__all__ = ['JsonDataclass', 'atomic_write_text', 'json_safe', 'write_csv', 'read_csv']


def _verify_dataclass_has_fields(dataclass, data):
    names = {f.name for f in dataclasses.fields(dataclass)}
    unmapped = set(data) - names
    if unmapped:
        raise ContractError(f'Unmapped fields: {sorted(unmapped)} for class {dataclass.__name__}')


class JsonDataclass:
    """
    Mixin for config dataclasses: serialized field names are exactly the dataclass field names.
    Tuples are written as JSON lists and restored from the field's default type.
    """

    def to_dict(self):
        out = {}
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if isinstance(value, JsonDataclass):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            out[field.name] = value
        return out

    @classmethod
    def from_dict(cls, data):
        _verify_dataclass_has_fields(cls, data)
        kwargs = {}
        for field in dataclasses.fields(cls):
            if field.name not in data:
                continue
            value = data[field.name]
            default = field.default if field.default is not dataclasses.MISSING else None
            if isinstance(default, tuple) and isinstance(value, list):
                value = tuple(value)
            kwargs[field.name] = cls._convert(field.name, value)
        return cls(**kwargs)

    @classmethod
    def _convert(cls, name, value):
        return value

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=False)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, 'r', encoding='utf8') as f:
            return cls.from_json(f.read())


def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-')
    try:
        with os.fdopen(fd, 'w', encoding='utf8') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def json_safe(value):
    """ NaN / inf -> None, numpy scalars -> python """
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if getattr(value, 'ndim', 0) > 0:
        return json_safe(value.tolist())
    if hasattr(value, 'item') and not isinstance(value, (str, bytes)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_csv(path, columns, rows):
    """ header + one line per row dict, written atomically; NaN cells stay empty """
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator='\n', extrasaction='ignore')
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ('' if v is None else v) for k, v in json_safe(dict(row)).items()})
    atomic_write_text(path, buf.getvalue())


def read_csv(path):
    with open(path, 'r', encoding='utf8', newline='') as f:
        return list(csv.DictReader(f))
