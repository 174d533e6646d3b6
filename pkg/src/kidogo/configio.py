"""Flat key=value config files (one pair per line, # comments allowed)."""

from .errors import ConfigInvalid


def parse_scalar(raw: str):
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        return float(raw)


def read_kv(path, known_keys) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigInvalid(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in known_keys:
                raise ConfigInvalid(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = parse_scalar(raw)
            except ValueError:
                raise ConfigInvalid(f"{path}:{lineno}: bad value {raw!r}") from None
    return out


def write_kv(path, mapping) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in mapping.items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            fh.write(f"{key}={value}\n")
