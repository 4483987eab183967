import json
import math
import os
import re
import unicodedata
from typing import Any, Dict, Iterator, List


def str2bool(string):
    str2val = {"True": True, "False": False, "true": True, "false": False}
    if string in str2val:
        return str2val[string]
    else:
        raise ValueError(f"Expected one of {set(str2val.keys())}, got {string}")


def optional_int(string):
    return None if string == "None" else int(string)


def optional_float(string):
    return None if string == "None" else float(string)


def alpha_or_auto(string):
    return "auto" if string == "auto" else float(string)


def int_list(string):
    return [ int(x) for x in string.split(",") if x.strip() ]


def slugify(value, allow_unicode=False):
    """
    Taken from https://github.com/django/django/blob/master/django/utils/text.py
    Convert to ASCII if 'allow_unicode' is False. Convert spaces or repeated
    dashes to single dashes. Remove characters that aren't alphanumerics,
    underscores, or hyphens. Convert to lowercase. Also strip leading and
    trailing whitespace, dashes, and underscores.
    """
    value = str(value)
    if allow_unicode:
        value = unicodedata.normalize('NFKC', value)
    else:
        value = unicodedata.normalize('NFKD', value).encode('ascii', 'ignore').decode('ascii')
    value = re.sub(r'[^\w\s-]', '', value.lower())
    return re.sub(r'[-\s]+', '-', value).strip('-_')


def _json_safe(value):
    # JSON has no NaN/Infinity literals
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def write_json(path: str, data: Dict[str, Any]):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_json_safe)


def read_json(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


class JsonLinesWriter:
    """
    Appends one JSON object per line and flushes after every record, so a crashed run keeps its log.
    """
    def __init__(self, path: str, append: bool = False):
        self.path = path
        self.file = open(path, "a" if append else "w", encoding="utf-8")

    def write(self, record: Dict[str, Any]):
        safe = { key: _json_safe(value) for key, value in record.items() }
        self.file.write(json.dumps(safe, sort_keys=False) + "\n")
        self.file.flush()

    def close(self):
        if not self.file.closed:
            self.file.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def read_json_lines(path: str) -> List[Dict[str, Any]]:
    return list(iter_json_lines(path))


def iter_json_lines(path: str) -> Iterator[Dict[str, Any]]:
    if not os.path.isfile(path):
        return
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield json.loads(line)
