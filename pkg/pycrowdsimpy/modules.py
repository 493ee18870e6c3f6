import configparser
import dataclasses
import enum
import hashlib
import json
import logging
import math
import os
import zlib
from typing import Any, Optional

import numpy as np


SETTINGS_FILE = 'crowdsim.ini'
SETTINGS_ENV = 'PYCROWDSIM_SETTINGS'


def convert_to_jsonable(value: Any) -> Any:
    """
    JSON に書き出せない値 (dataclass, Enum, set, numpy 型, inf) を書き出せる形に変える
    :param value:
    :return:
    """
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: convert_to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): convert_to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (set, frozenset)):
        return sorted(convert_to_jsonable(v) for v in value)
    if isinstance(value, (list, tuple)):
        return [convert_to_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return convert_to_jsonable(value.item())
    if isinstance(value, np.ndarray):
        return convert_to_jsonable(value.tolist())
    if isinstance(value, float) and math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return value


def canonical_json(value: Any) -> str:
    return json.dumps(convert_to_jsonable(value), sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def fingerprint(value: Any) -> str:
    """
    設定値の指紋 (正規化した JSON の SHA-256)
    """
    return hashlib.sha256(canonical_json(value).encode('utf-8')).hexdigest()


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """
    シードと用途名から独立した乱数ストリームを作る。プロセスや実行順によらず同じ列になる
    :param seed: シナリオのシード
    :param name: ストリームの用途名 (例: 'world', 'network')
    :return: numpy の Generator
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode('utf-8'))])


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger('pycrowdsimpy.' + name)


def kv(event: str, **fields: Any) -> str:
    """
    key=value 形式のログ行を組み立てる
    """
    parts = ['event={event}'.format(event=event)]
    for key in sorted(fields):
        value = fields[key]
        if isinstance(value, float):
            value = '{:.6g}'.format(value)
        parts.append('{key}={value}'.format(key=key, value=value))
    return ' '.join(parts)


class Settings:
    def __init__(self,
                 config_path: Optional[str] = None,
                 out_dir: str = 'results',
                 log_level: str = 'WARNING',
                 seed: Optional[int] = None):
        self.config_path = config_path
        self.out_dir = out_dir
        self.log_level = log_level
        self.seed = seed


def load_settings(path: Optional[str] = None) -> Settings:
    """
    設定ファイル (INI) を読む。ファイルが無い場合は既定値を返す

    :param path: 設定ファイルのパス。省略時は環境変数 PYCROWDSIM_SETTINGS、それも無ければ crowdsim.ini
    :return: Settings
    """
    path = path or os.environ.get(SETTINGS_ENV) or SETTINGS_FILE
    config_file = configparser.ConfigParser()
    config_file.read(path, encoding='utf-8')
    if not config_file.has_section('crowdsim'):
        return Settings()
    section = config_file['crowdsim']
    seed = section.get('Seed')
    return Settings(
        config_path=section.get('Config'),
        out_dir=section.get('OutDir', 'results'),
        log_level=section.get('LogLevel', 'WARNING'),
        seed=int(seed) if seed else None,
    )
