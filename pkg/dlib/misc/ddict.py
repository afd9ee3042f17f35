from pathlib import Path
from typing import Any, Hashable


class ddict(dict):
    """dict with dot access. Missing keys read as None instead of raising."""

    def __getattr__(self, key: Hashable) -> Any:
        try:
            return self[key]
        except KeyError:
            return None

    def __setattr__(self, key: Hashable, value: Any) -> None:
        self[key] = value

    def __delattr__(self, key: Hashable) -> None:
        del self[key]

    def __dir__(self):
        return self.keys()


def load_kv_file(path: str | Path) -> ddict:
    """
    Read a `key=value` file into a ddict of strings. Blank lines and `#` comments are skipped,
    keys may be written with or without leading dashes and later keys override earlier ones.
    """
    entries = ddict()
    for number, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lstrip("-")
        if not sep or not key:
            raise ValueError(f"{path}:{number}: expected `key=value`, got {raw!r}")
        entries[key] = value.strip()
    return entries


def to_cli_flags(entries: dict) -> list[str]:
    """`--key=value` per entry; whitespace separated values become one flag with several values."""
    flags = []
    for key, value in entries.items():
        values = str(value).split()
        if len(values) > 1:
            flags += [f"--{key}", *values]
        else:
            flags.append(f"--{key}={value}")
    return flags
