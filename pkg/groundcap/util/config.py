import logging
import os
import typing
from dataclasses import fields

log = logging.getLogger(__name__)

ENV_PREFIX = 'GROUNDCAP_'
TRUE_VALUES = frozenset({'1', 'true', 'yes', 'on'})
FALSE_VALUES = frozenset({'0', 'false', 'no', 'off'})


def strip_prefix(variable, prefix):
    variable = variable.strip()
    return variable[len(prefix):]


def load_config(path):
    """ Reads a flat key=value file. '#' starts a comment, blank lines
        are skipped and every key may appear once.
    """
    settings = {}
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition('=')
            key = key.strip().replace('-', '_')
            if not sep or not key:
                raise ValueError('{}:{}: expected key=value.'.format(path, lineno))
            if key in settings:
                raise ValueError('{}:{}: duplicate key {!r}.'.format(path, lineno, key))
            settings[key] = value.strip()
    return settings


def write_config(path, settings):
    with open(path, 'w', encoding='utf-8') as f:
        for key in sorted(settings):
            f.write('{} = {}\n'.format(key, format_value(settings[key])))


def format_value(value):
    if isinstance(value, (list, tuple, set, frozenset)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return ','.join(str(item) for item in items)
    return str(value)


def get_environment_overrides(prefix=ENV_PREFIX, environ=None):
    """ Returns prefixed environment variables with the prefix stripped
        and the key lower-cased.
        eg. GROUNDCAP_HIDDEN_SIZE=64 --> hidden_size=64
    """
    environ = os.environ if environ is None else environ
    return {
        strip_prefix(key, prefix).lower(): val for key, val in environ.items()
        if key.startswith(prefix)
    }


def resolve_settings(config_path=None, cli_overrides=None, environ=None):
    """ Layers settings: config file < environment < command line. """
    settings = {}
    if config_path:
        settings.update(load_config(config_path))
    settings.update(get_environment_overrides(environ=environ))
    settings.update({key: value for key, value in (cli_overrides or {}).items()
                     if value not in (None, '')})
    return settings


def _coerce(key, hint, value):
    if not isinstance(value, str):
        return value
    text = value.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        if text.lower() in ('', 'none', 'null'):
            return None
        hint = next(arg for arg in args if arg is not type(None))
        return _coerce(key, hint, text)
    if origin in (tuple, frozenset):
        item = args[0]
        items = [_coerce(key, item, part) for part in text.split(',') if part.strip()]
        return tuple(items) if origin is tuple else frozenset(items)
    if hint is bool:
        if text.lower() in TRUE_VALUES:
            return True
        if text.lower() in FALSE_VALUES:
            return False
        raise ValueError('{} must be a boolean, got {!r}.'.format(key, value))
    try:
        return hint(text)
    except (TypeError, ValueError):
        raise ValueError('{} must be of type {}, got {!r}.'
                         .format(key, getattr(hint, '__name__', hint), value))


class ConfigMixin:
    """ Builds a dataclass config from flat settings, picking only the
        keys that name one of its fields.
    """

    @classmethod
    def from_settings(cls, settings=None, **overrides):
        merged = dict(settings or {})
        merged.update({key: value for key, value in overrides.items() if value is not None})
        hints = typing.get_type_hints(cls)
        values = {f.name: _coerce(f.name, hints[f.name], merged[f.name])
                  for f in fields(cls) if f.name in merged}
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self):
        pass

    def to_settings(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}
