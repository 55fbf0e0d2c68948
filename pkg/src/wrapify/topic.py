from __future__ import annotations

import re

from wrapify.errors import InvalidTopic

_TOPIC_RE = re.compile(r"(/[A-Za-z0-9_-]+)+")

BUILTIN_CARRIERS = ("tcp", "inproc", "mcast")


def check_topic(path: str) -> str:
    """Return ``path`` unchanged if it is a valid topic such as ``/example/read_msg``."""
    if not isinstance(path, str) or not _TOPIC_RE.fullmatch(path):
        raise InvalidTopic(f"invalid topic {path!r}; expected /seg(/seg)* with seg in [A-Za-z0-9_-]+")
    return path


def is_topic(path: object) -> bool:
    return isinstance(path, str) and _TOPIC_RE.fullmatch(path) is not None
