import dataclasses
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from pycrowdsimpy import const
from pycrowdsimpy.Dispatch import ContextWeights, DispatchMode, NetworkModel
from pycrowdsimpy.errors import InvalidConfig
from pycrowdsimpy.GeoLearn import SeedLabel, Verdict, seed_from_dict
from pycrowdsimpy.modules import convert_to_jsonable, fingerprint
from pycrowdsimpy.Quality import PrsParams
from pycrowdsimpy.World import WorldConfig


def _check_keys(cls, data: dict) -> None:
    unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise InvalidConfig('{name} に未知のキーがあります: {keys}'.format(name=cls.__name__, keys=sorted(unknown)))


@dataclass
class TaskCount:
    task_type: int
    kind: str = 'normal'
    count: int = 1


@dataclass
class TaskGeneratorConfig:
    counts: List[TaskCount] = field(default_factory=lambda: [TaskCount(task_type=1, count=50)])
    questions_per_task: int = 5
    labels_per_question: int = 2
    multi_label_fraction: float = 0.0
    task_radius_m: float = 1500.0
    emergency_radius_m: float = 800.0
    emergency_max_radius_m: float = const.EMERGENCY_MAX_RADIUS_M
    admissible_classes: List[int] = field(default_factory=list)
    placement: str = 'places'
    payload_bytes: int = 512

    @classmethod
    def from_dict(cls, data: dict) -> 'TaskGeneratorConfig':
        _check_keys(cls, data)
        data = dict(data)
        if 'counts' in data:
            data['counts'] = [c if isinstance(c, TaskCount) else TaskCount(**c) for c in data['counts']]
        return cls(**data)

    @property
    def n_tasks(self) -> int:
        return sum(c.count for c in self.counts)


@dataclass
class DispatchConfig:
    weights: ContextWeights = ContextWeights()
    fanout: int = 5
    mode: DispatchMode = DispatchMode.RANKED
    emergency_mode: str = 'broadcast'
    warmup_tasks: int = 0
    max_questions_per_worker: Optional[int] = None

    @classmethod
    def from_dict(cls, data: dict) -> 'DispatchConfig':
        _check_keys(cls, data)
        data = dict(data)
        if 'weights' in data and not isinstance(data['weights'], ContextWeights):
            data['weights'] = ContextWeights(**data['weights'])
        if 'mode' in data:
            data['mode'] = DispatchMode(data['mode'])
        return cls(**data)


@dataclass
class QualityConfig:
    prs: PrsParams = PrsParams()
    theta: float = 0.5
    em_max_iters: int = 50
    em_tol: float = 1e-6
    w_min: float = const.CREDIBILITY_W_MIN
    methods: Tuple[str, ...] = const.AGGREGATION_METHODS
    hypothesis_method: Optional[str] = None
    half_life_s: float = 3600.0
    w_acc: float = 0.5
    w_eff: float = 0.5
    alpha: float = const.LAPLACE_ALPHA
    response_median_s: float = 20.0
    response_sigma: float = 0.5
    notice_mean_s: float = 5.0

    @classmethod
    def from_dict(cls, data: dict) -> 'QualityConfig':
        _check_keys(cls, data)
        data = dict(data)
        if 'prs' in data and not isinstance(data['prs'], PrsParams):
            prs = dict(data['prs'])
            prs['per_type_beta'] = {int(k): float(v) for k, v in prs.get('per_type_beta', {}).items()}
            data['prs'] = PrsParams(**prs)
        if 'methods' in data:
            data['methods'] = tuple(data['methods'])
        return cls(**data)

    @property
    def comparison_method(self) -> str:
        """
        仮説の比較実験で正解率を測る集約手法。未指定なら methods の先頭
        """
        return self.hypothesis_method or self.methods[0]


@dataclass
class GeoLearnConfig:
    enabled: bool = True
    min_samples: int = const.MIN_SAMPLES
    k: int = 2
    acc_threshold: float = 0.7
    prs_threshold: float = 0.5
    max_iters: int = 100
    tol: float = 1e-6
    seeds: List[SeedLabel] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict) -> 'GeoLearnConfig':
        _check_keys(cls, data)
        data = dict(data)
        if 'seeds' in data:
            data['seeds'] = [s if isinstance(s, SeedLabel) else seed_from_dict(s) for s in data['seeds']]
        return cls(**data)


@dataclass
class ScenarioConfig:
    """
    シナリオ1回分の設定。シードは必須 (実時間由来の乱数は使わない)
    """
    seed: int
    world: WorldConfig = field(default_factory=WorldConfig)
    tasks: TaskGeneratorConfig = field(default_factory=TaskGeneratorConfig)
    dispatch: DispatchConfig = field(default_factory=DispatchConfig)
    network: NetworkModel = NetworkModel()
    quality: QualityConfig = field(default_factory=QualityConfig)
    geolearn: GeoLearnConfig = field(default_factory=GeoLearnConfig)
    duration_s: float = const.DAY_SECONDS
    record_timings: bool = False
    efficiency_prior: Dict[str, bool] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> 'ScenarioConfig':
        """
        JSON 由来の辞書から設定を組み立てる

        :param data: 設定の辞書
        :return: ScenarioConfig
        """
        if 'seed' not in data:
            raise InvalidConfig('seed は必須です')
        _check_keys(cls, data)
        try:
            return cls(
                seed=int(data['seed']),
                world=WorldConfig.from_dict(data.get('world', {})),
                tasks=TaskGeneratorConfig.from_dict(data.get('tasks', {})),
                dispatch=DispatchConfig.from_dict(data.get('dispatch', {})),
                network=NetworkModel(**data.get('network', {})),
                quality=QualityConfig.from_dict(data.get('quality', {})),
                geolearn=GeoLearnConfig.from_dict(data.get('geolearn', {})),
                duration_s=float(data.get('duration_s', const.DAY_SECONDS)),
                record_timings=bool(data.get('record_timings', False)),
                efficiency_prior={str(k): bool(v) for k, v in data.get('efficiency_prior', {}).items()},
            )
        except InvalidConfig:
            raise
        except (TypeError, ValueError, KeyError) as e:
            raise InvalidConfig('設定が不正です: {e}'.format(e=e)) from e

    @classmethod
    def from_json(cls, path: str) -> 'ScenarioConfig':
        try:
            with open(path, encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise InvalidConfig('設定ファイルを読めません: {path}: {e}'.format(path=path, e=e)) from e
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        data = convert_to_jsonable(self)
        data['world'] = convert_to_jsonable(self.world.to_dict())
        return data

    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())

    def replace(self, **changes) -> 'ScenarioConfig':
        return dataclasses.replace(self, **changes)

    def prior_lookup(self) -> Dict[Tuple[int, int], bool]:
        # "分類ID:種別ID" -> 効率的か
        lookup = {}
        for key, efficient in self.efficiency_prior.items():
            class_id, task_type = key.split(':')
            lookup[(int(class_id), int(task_type))] = efficient
        return lookup

    def validate(self) -> None:
        """
        部分設定をまとめて検査する。問題があれば InvalidConfig を送出する
        """
        self.world.validate()
        tasks = self.tasks
        if not tasks.counts or tasks.n_tasks < 1:
            raise InvalidConfig('タスク数が 0 です')
        for c in tasks.counts:
            if c.kind not in ('normal', 'emergency') or c.count < 0:
                raise InvalidConfig('タスク数の指定が不正です: {c}'.format(c=c))
        if tasks.questions_per_task < 1 or tasks.labels_per_question < 2:
            raise InvalidConfig('問題数は 1 以上、候補ラベル数は 2 以上にしてください')
        if not 0.0 <= tasks.multi_label_fraction <= 1.0:
            raise InvalidConfig('multi_label_fraction は [0, 1] の範囲で指定してください')
        if not tasks.task_radius_m > 0 or not 0 < tasks.emergency_radius_m <= tasks.emergency_max_radius_m:
            raise InvalidConfig('タスクの半径が不正です')
        if tasks.placement not in ('places', 'uniform'):
            raise InvalidConfig('placement は places / uniform のいずれかです')
        if self.dispatch.fanout < 1:
            raise InvalidConfig('fanout は 1 以上にしてください')
        if self.dispatch.emergency_mode not in ('broadcast', 'ranked'):
            raise InvalidConfig('emergency_mode は broadcast / ranked のいずれかです')
        if self.dispatch.max_questions_per_worker is not None and self.dispatch.max_questions_per_worker < 1:
            raise InvalidConfig('max_questions_per_worker は 1 以上にしてください')
        quality = self.quality
        if set(quality.methods) - set(const.AGGREGATION_METHODS) or not quality.methods:
            raise InvalidConfig('未知の集約手法があります: {m}'.format(m=quality.methods))
        if quality.hypothesis_method is not None and quality.hypothesis_method not in quality.methods:
            raise InvalidConfig('hypothesis_method は methods に含まれる手法にしてください: {m}'.format(
                m=quality.hypothesis_method))
        if not 0.0 < quality.theta <= 1.0:
            raise InvalidConfig('theta は (0, 1] の範囲で指定してください')
        if not 0.0 < quality.w_min < 1.0:
            raise InvalidConfig('w_min は (0, 1) の範囲で指定してください')
        if quality.response_median_s <= 0 or quality.response_sigma < 0 or quality.notice_mean_s < 0:
            raise InvalidConfig('応答時間モデルのパラメーターが不正です')
        if not self.duration_s > 0:
            raise InvalidConfig('duration_s は正の値にしてください')
        seeds = self.geolearn.seeds
        if seeds and len({s.verdict for s in seeds}) < len(Verdict):
            raise InvalidConfig('シードラベルは判定ごとに1件以上必要です')
