"""Declarative file selection: JSON rules compiled into entry predicates.

Rules are OR-ed; the criteria inside one rule are AND-ed. Name and path
comparisons are case-insensitive unless a rule sets ``case_sensitive``.
"""

import fnmatch
import hashlib
import json
import re
from dataclasses import dataclass
from typing import List, Optional

from sit.errors import SitError
from sit.obslog import sink_or_null
from sit.source import list_entries

MAX_CONFIG_BYTES = 1 << 20
RULE_KEYS = ("name_glob", "path_prefix", "size_min", "size_max", "extension")


class ConfigError(SitError):
    """The selection configuration is unusable."""


class BadJson(ConfigError):
    pass


class EmptySelection(ConfigError):
    pass


class BadRule(ConfigError):
    pass


@dataclass(frozen=True)
class SelectionRule:
    name_glob: Optional[str] = None
    path_prefix: Optional[str] = None
    size_min: Optional[int] = None
    size_max: Optional[int] = None
    extension: Optional[str] = None
    case_sensitive: bool = False

    def __post_init__(self):
        if all(getattr(self, k) is None for k in RULE_KEYS):
            raise BadRule("rule has no criteria")
        if self.size_min is not None and self.size_max is not None and self.size_min > self.size_max:
            raise BadRule("size_min %d exceeds size_max %d" % (self.size_min, self.size_max))

    def describe(self):
        return ",".join("%s=%s" % (k, getattr(self, k)) for k in RULE_KEYS if getattr(self, k) is not None)


@dataclass(frozen=True)
class SelectionConfig:
    rules: List[SelectionRule]
    config_digest: str


def _rule_from_json(i, obj):
    if not isinstance(obj, dict):
        raise BadRule("rule %d is not an object" % i)
    unknown = set(obj) - set(RULE_KEYS) - {"case_sensitive"}
    if unknown:
        raise BadRule("rule %d has unknown keys: %s" % (i, ", ".join(sorted(unknown))))
    for key in ("name_glob", "path_prefix", "extension"):
        if key in obj and not isinstance(obj[key], str):
            raise BadRule("rule %d: %s must be a string" % (i, key))
    for key in ("size_min", "size_max"):
        value = obj.get(key)
        if key in obj and (not isinstance(value, int) or isinstance(value, bool) or value < 0):
            raise BadRule("rule %d: %s must be a non-negative integer" % (i, key))
    if "case_sensitive" in obj and not isinstance(obj["case_sensitive"], bool):
        raise BadRule("rule %d: case_sensitive must be a boolean" % i)
    ext = obj.get("extension")
    if ext is not None:
        ext = ext.lstrip(".")
    try:
        return SelectionRule(
            name_glob=obj.get("name_glob"),
            path_prefix=obj.get("path_prefix"),
            size_min=obj.get("size_min"),
            size_max=obj.get("size_max"),
            extension=ext,
            case_sensitive=obj.get("case_sensitive", False),
        )
    except BadRule as exc:
        raise BadRule("rule %d: %s" % (i, exc)) from None


def parse_config(raw):
    """Parse selection JSON bytes; the digest is SHA256 over the exact input bytes."""
    if len(raw) > MAX_CONFIG_BYTES:
        raise BadJson("config is %d bytes, limit is %d" % (len(raw), MAX_CONFIG_BYTES))
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise BadJson("config is not valid UTF-8 JSON: %s" % exc) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("rules"), list):
        raise BadJson('config must be an object with a "rules" list')
    if not doc["rules"]:
        raise EmptySelection("config selects nothing: rules is empty")
    rules = [_rule_from_json(i, r) for i, r in enumerate(doc["rules"])]
    return SelectionConfig(rules, hashlib.sha256(raw).hexdigest())


def load_config(path):
    with open(path, "rb") as fp:
        return parse_config(fp.read(MAX_CONFIG_BYTES + 1))


def _glob_match(pattern, text, case_sensitive):
    if not case_sensitive:
        pattern, text = pattern.casefold(), text.casefold()
    return re.fullmatch(fnmatch.translate(pattern), text, re.DOTALL) is not None


def match_entry(rule, entry):
    fold = (lambda s: s) if rule.case_sensitive else str.casefold
    if rule.name_glob is not None and not _glob_match(rule.name_glob, entry.name, rule.case_sensitive):
        return False
    if rule.path_prefix is not None and not fold(entry.full_path).startswith(fold(rule.path_prefix)):
        return False
    if rule.size_min is not None and entry.size_bytes < rule.size_min:
        return False
    if rule.size_max is not None and entry.size_bytes > rule.size_max:
        return False
    if rule.extension is not None:
        _, dot, ext = entry.name.rpartition(".")
        if not dot or fold(ext) != fold(rule.extension):
            return False
    return True


def enumerate_matches(handle, config, log=None):
    """Entries matching any rule, in the source's canonical order, each at most once."""
    log = sink_or_null(log, "selection")
    log.info("start", rules=len(config.rules), config_sha256=config.config_digest)
    for i, rule in enumerate(config.rules):
        log.info("rule", index=i, criteria=rule.describe())
    seen = set()
    matches = []
    for entry in list_entries(handle):
        if entry.identity in seen:
            continue
        if any(match_entry(rule, entry) for rule in config.rules):
            seen.add(entry.identity)
            matches.append(entry)
            log.info("matched", path=entry.full_path, record=entry.record_no, size=entry.size_bytes)
    if not matches:
        log.warn("no_matches", config_sha256=config.config_digest)
    log.info("end", matches=len(matches), config_sha256=config.config_digest)
    return matches
