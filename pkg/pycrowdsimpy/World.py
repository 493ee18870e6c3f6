import bisect
import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from pycrowdsimpy import const
from pycrowdsimpy.Domain import (GeoPoint, LocationIndex, Place, Taxonomy, WorkerLocation, classify_location,
                                 place_from_dict, place_to_dict)
from pycrowdsimpy.errors import ClockRegression, EmptyWorld, InvalidConfig, NonPositiveTime, OutOfOrder
from pycrowdsimpy.modules import get_logger, kv, rng_stream
from pycrowdsimpy.Quality import PrsParams, personal_response_time

logger = get_logger('World')


class StrategyKind(enum.Enum):
    HONEST = 'honest'
    UNIFORM_SPAMMER = 'uniform_spammer'
    FIXED_ANSWER_SPAMMER = 'fixed_answer_spammer'
    SLOTH = 'sloth'


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind = StrategyKind.HONEST
    fixed_label_index: int = 0
    slowness: float = 1.0

    def __post_init__(self):
        if self.slowness < 1.0:
            raise ValueError('slowness は 1 以上にしてください')

    @property
    def is_spammer(self) -> bool:
        return self.kind in (StrategyKind.UNIFORM_SPAMMER, StrategyKind.FIXED_ANSWER_SPAMMER)


@dataclass(frozen=True)
class MobilitySchedule:
    """
    1日を覆う滞在区間の列 (開始秒, 場所ID)。日を跨ぐと同じ予定を繰り返す
    """
    segments: Tuple[Tuple[float, int], ...]
    day_length: float = const.DAY_SECONDS

    def __post_init__(self):
        if not self.segments:
            raise ValueError('移動予定が空です')
        starts = [s for s, _ in self.segments]
        if starts[0] != 0:
            raise ValueError('移動予定は 0 秒から始めてください')
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError('移動予定の区間が重なっているか順序が不正です')
        if starts[-1] >= self.day_length:
            raise ValueError('移動予定の区間が1日の長さを超えています')

    def place_at(self, t: float) -> int:
        starts = [s for s, _ in self.segments]
        position = bisect.bisect_right(starts, t % self.day_length) - 1
        return self.segments[position][1]

    def dwell_by_place(self) -> Dict[int, float]:
        dwell = {}  # type: Dict[int, float]
        ends = [s for s, _ in self.segments[1:]] + [self.day_length]
        for (start, place_id), end in zip(self.segments, ends):
            dwell[place_id] = dwell.get(place_id, 0.0) + (end - start)
        return dwell


@dataclass(frozen=True)
class ActivityRecord:
    task_id: int
    task_type: int
    class_id: int
    t: float
    correct: bool
    multi_label: bool
    timestamp: float
    accepted: bool = True


@dataclass(frozen=True)
class ActivityHistory:
    records: Tuple[ActivityRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class WorkerProfile:
    skill: Mapping[int, float]
    mean_prs: Mapping[int, float]
    class_affinity: Mapping[int, float]
    multilabel_willingness: float
    sample_counts: Mapping[int, int]


@dataclass(frozen=True)
class Worker:
    id: int
    location: WorkerLocation
    schedule: MobilitySchedule
    reliability: float
    strategy: Strategy
    profile: WorkerProfile
    type_reliability: Mapping[int, float] = field(default_factory=dict)
    multilabel_propensity: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.reliability <= 1.0:
            raise ValueError('reliability は [0, 1] の範囲で指定してください')

    def reliability_for(self, task_type: int) -> float:
        return self.type_reliability.get(task_type, self.reliability)


@dataclass
class WorldConfig:
    n_workers: int = 100
    spammer_ratio: float = 0.0
    max_spammer_ratio: float = const.MAX_SPAMMER_RATIO
    strategy_mix: Dict[str, float] = field(default_factory=lambda: {'uniform': 1.0, 'fixed': 0.0})
    fixed_label_index: int = 0
    sloth_ratio: float = 0.0
    sloth_multiplier: Tuple[float, float] = (1.5, 3.0)
    reliability: Dict[str, object] = field(default_factory=lambda: {'kind': 'uniform', 'low': 0.7, 'high': 0.9})
    skill_concentration: Optional[Dict[str, float]] = None
    multilabel_propensity: Tuple[float, float] = (1.0, 1.0)
    places: List[Place] = field(default_factory=list)
    n_places: int = const.DEFAULT_N_PLACES
    area_center: GeoPoint = GeoPoint(52.2297, 21.0122)
    area_radius_m: float = 3000.0
    place_radius_m: float = 200.0
    taxonomy: Optional[dict] = None
    segments_per_day: Tuple[int, int] = (3, 6)
    day_length: float = const.DAY_SECONDS
    busyness: Optional[Dict[int, float]] = None

    @classmethod
    def from_dict(cls, data: dict) -> 'WorldConfig':
        data = dict(data)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InvalidConfig('WorldConfig に未知のキーがあります: {keys}'.format(keys=sorted(unknown)))
        if 'places' in data:
            data['places'] = [p if isinstance(p, Place) else place_from_dict(p) for p in data['places']]
        if 'area_center' in data and not isinstance(data['area_center'], GeoPoint):
            data['area_center'] = GeoPoint(data['area_center']['lat'], data['area_center']['lon'])
        for key in ('sloth_multiplier', 'multilabel_propensity', 'segments_per_day'):
            if key in data:
                data[key] = tuple(data[key])
        if data.get('busyness') is not None:
            data['busyness'] = {int(k): float(v) for k, v in data['busyness'].items()}
        try:
            return cls(**data)
        except (TypeError, ValueError) as e:
            raise InvalidConfig('WorldConfig が不正です: {e}'.format(e=e)) from e

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data['places'] = [place_to_dict(p) for p in self.places]
        data['area_center'] = {'lat': self.area_center.lat, 'lon': self.area_center.lon}
        return data

    def validate(self):
        if self.n_workers < 1:
            raise EmptyWorld('ワーカーが 0 人です')
        if not self.places and self.n_places < 1:
            raise EmptyWorld('場所が 0 件です')
        if not 0.0 <= self.max_spammer_ratio <= 1.0:
            raise InvalidConfig('max_spammer_ratio は [0, 1] の範囲で指定してください')
        if not 0.0 <= self.spammer_ratio <= self.max_spammer_ratio:
            raise InvalidConfig('spammer_ratio は [0, {cap}] の範囲で指定してください'.format(
                cap=self.max_spammer_ratio))
        if not 0.0 <= self.sloth_ratio <= 1.0:
            raise InvalidConfig('sloth_ratio は [0, 1] の範囲で指定してください')
        if self.sloth_multiplier[0] < 1.0 or self.sloth_multiplier[1] < self.sloth_multiplier[0]:
            raise InvalidConfig('sloth_multiplier は 1 以上の (下限, 上限) にしてください')
        if any(v < 0 for v in self.strategy_mix.values()) or sum(self.strategy_mix.values()) <= 0:
            raise InvalidConfig('strategy_mix の比率が不正です')
        if set(self.strategy_mix) - {'uniform', 'fixed'}:
            raise InvalidConfig('strategy_mix は uniform / fixed のみ指定できます')
        low, high = self.segments_per_day
        if not 1 <= low <= high:
            raise InvalidConfig('segments_per_day が不正です')
        if self.busyness and any(b < 1.0 for b in self.busyness.values()):
            raise InvalidConfig('busyness は 1 以上にしてください')
        kind = self.reliability.get('kind')
        if kind not in ('uniform', 'mixture', 'fixed'):
            raise InvalidConfig('reliability.kind は uniform / mixture / fixed のいずれかです')


@dataclass(frozen=True)
class World:
    taxonomy: Taxonomy
    index: LocationIndex
    workers: Tuple[Worker, ...]
    clock: float
    seed: int
    place_classes: Mapping[int, int]
    busyness: Mapping[int, float]

    def worker(self, worker_id: int) -> Worker:
        return self.workers[worker_id]

    def busyness_of(self, class_id: int) -> float:
        return self.busyness.get(class_id, 1.0)


def spammer_count(ratio: float, n_workers: int) -> int:
    # 四捨五入 (0.5 は切り上げ)
    return int(math.floor(ratio * n_workers + 0.5))


def _apportion(total: int, mix: Mapping[str, float]) -> Dict[str, int]:
    # 最大剰余法
    weight = sum(mix.values())
    quotas = {k: total * v / weight for k, v in sorted(mix.items())}
    counts = {k: int(math.floor(q)) for k, q in quotas.items()}
    rest = total - sum(counts.values())
    for k in sorted(quotas, key=lambda k: (-(quotas[k] - counts[k]), k))[:rest]:
        counts[k] += 1
    return counts


def _draw_reliabilities(spec: Mapping[str, object], n: int, rng: np.random.Generator) -> List[float]:
    kind = spec.get('kind')
    if kind == 'uniform':
        return [float(v) for v in rng.uniform(float(spec.get('low', 0.7)), float(spec.get('high', 0.9)), n)]
    if kind == 'mixture':
        values = [float(v) for v in spec['values']]
        weights = np.array([float(w) for w in spec.get('weights', [1.0] * len(values))])
        return [float(v) for v in rng.choice(values, size=n, p=weights / weights.sum())]
    values = [float(v) for v in spec['values']]
    return [values[i % len(values)] for i in range(n)]


def _generate_places(config: WorldConfig, taxonomy: Taxonomy, rng: np.random.Generator) -> List[Place]:
    class_ids = [c for c in taxonomy.class_ids() if c != taxonomy.default_class_id] or taxonomy.class_ids()
    center = config.area_center
    places = []
    for i in range(config.n_places):
        distance = config.area_radius_m * math.sqrt(rng.uniform())
        bearing = rng.uniform(0, 2 * math.pi)
        dlat = distance * math.cos(bearing) / const.EARTH_RADIUS_M
        dlon = distance * math.sin(bearing) / (const.EARTH_RADIUS_M * math.cos(math.radians(center.lat)))
        lat = max(-90.0, min(90.0, center.lat + math.degrees(dlat)))
        lon = (center.lon + math.degrees(dlon) + 180.0) % 360.0 - 180.0
        places.append(Place(id=i, point=GeoPoint(lat, lon), class_id=class_ids[i % len(class_ids)],
                            radius_m=config.place_radius_m))
    return places


def _generate_schedule(place_ids: Sequence[int], config: WorldConfig, rng: np.random.Generator) -> MobilitySchedule:
    low, high = config.segments_per_day
    n_segments = int(rng.integers(low, high + 1))
    boundaries = sorted({float(int(b)) for b in rng.uniform(1, config.day_length, n_segments - 1)})
    starts = [0.0] + [b for b in boundaries if 0.0 < b < config.day_length]
    chosen = rng.choice(place_ids, size=len(starts))
    return MobilitySchedule(segments=tuple((s, int(p)) for s, p in zip(starts, chosen)),
                            day_length=config.day_length)


def build_profile(history: ActivityHistory,
                  schedule: MobilitySchedule,
                  place_classes: Mapping[int, int],
                  class_ids: Sequence[int],
                  task_types: Sequence[int],
                  alpha: float = const.LAPLACE_ALPHA,
                  prs: Optional[PrsParams] = None) -> WorkerProfile:
    """
    活動履歴と移動予定からワーカープロファイルを作る

    skill[tt] = (正解数 + α) / (回答数 + 2α)、class_affinity は分類ごとの滞在時間の割合、
    multilabel_willingness は複数ラベル問題を受けた割合 (α で平滑化)。

    :param history: 活動履歴
    :param schedule: 移動予定
    :param place_classes: 場所ID -> ロケーション分類ID
    :param class_ids: 分類IDの一覧
    :param task_types: タスク種別IDの一覧
    :param alpha: ラプラス平滑化の擬似カウント
    :param prs: PRS のパラメーター
    :return: WorkerProfile
    """
    if not alpha > 0:
        raise ValueError('alpha は正の値にしてください')
    prs = prs or PrsParams()
    answered = {tt: 0 for tt in task_types}
    correct = {tt: 0 for tt in task_types}
    prs_scores = {tt: [] for tt in task_types}  # type: Dict[int, List[float]]
    offered_ml = accepted_ml = 0
    for r in history.records:
        if r.multi_label:
            offered_ml += 1
            accepted_ml += int(r.accepted)
        if not r.accepted:
            continue
        answered[r.task_type] = answered.get(r.task_type, 0) + 1
        correct[r.task_type] = correct.get(r.task_type, 0) + int(r.correct)
        prs_scores.setdefault(r.task_type, []).append(personal_response_time(prs, r.t, r.task_type))

    affinity = {c: 0.0 for c in class_ids}
    for place_id, dwell in schedule.dwell_by_place().items():
        class_id = place_classes[place_id]
        affinity[class_id] = affinity.get(class_id, 0.0) + dwell / schedule.day_length

    return WorkerProfile(
        skill={tt: (correct[tt] + alpha) / (answered[tt] + 2 * alpha) for tt in sorted(answered)},
        mean_prs={tt: (math.fsum(v) / len(v) if v else 0.0) for tt, v in sorted(prs_scores.items())},
        class_affinity=affinity,
        multilabel_willingness=(accepted_ml + alpha) / (offered_ml + 2 * alpha),
        sample_counts=dict(sorted(answered.items())),
    )


def record_activity(history: ActivityHistory, record: ActivityRecord) -> ActivityHistory:
    if not record.t > 0:
        raise NonPositiveTime('応答時間は正の値にしてください')
    if history.records and record.timestamp < history.records[-1].timestamp:
        raise OutOfOrder('記録の時刻が直前の記録より前です: {t}'.format(t=record.timestamp))
    return ActivityHistory(records=history.records + (record,))


def generate_world(config: WorldConfig, seed: int) -> World:
    """
    合成ワーカー集団を生成する。(config, seed) が同じなら同じ World になる

    :param config: WorldConfig
    :param seed: シード
    :return: World
    """
    config.validate()
    rng = rng_stream(seed, 'world')
    taxonomy = Taxonomy.from_dict(config.taxonomy) if config.taxonomy else Taxonomy.default()
    places = list(config.places) or _generate_places(config, taxonomy, rng)
    index = LocationIndex(taxonomy, places)
    place_classes = {p.id: classify_location(p.point, index).id for p in index.places}
    class_ids = taxonomy.class_ids()
    task_types = taxonomy.task_type_ids()

    n = config.n_workers
    order = [int(i) for i in rng.permutation(n)]
    n_spam = spammer_count(config.spammer_ratio, n)
    spammers = sorted(order[:n_spam])
    honest = order[n_spam:]
    strategies = {i: Strategy() for i in range(n)}
    counts = _apportion(n_spam, config.strategy_mix)
    for position, worker_id in enumerate(spammers):
        if position < counts.get('uniform', 0):
            strategies[worker_id] = Strategy(kind=StrategyKind.UNIFORM_SPAMMER)
        else:
            strategies[worker_id] = Strategy(kind=StrategyKind.FIXED_ANSWER_SPAMMER,
                                             fixed_label_index=config.fixed_label_index)
    for worker_id in sorted(honest[:spammer_count(config.sloth_ratio, len(honest))]):
        strategies[worker_id] = Strategy(kind=StrategyKind.SLOTH,
                                         slowness=float(rng.uniform(*config.sloth_multiplier)))

    reliabilities = _draw_reliabilities(config.reliability, n, rng)
    propensities = rng.uniform(config.multilabel_propensity[0], config.multilabel_propensity[1], n)
    place_ids = [p.id for p in index.places]
    workers = []
    for i in range(n):
        schedule = _generate_schedule(place_ids, config, rng)
        place = index.place(schedule.place_at(0.0))
        type_reliability = {}
        if config.skill_concentration:
            specialty = task_types[i % len(task_types)]
            type_reliability = {tt: float(config.skill_concentration['matched'] if tt == specialty
                                          else config.skill_concentration['other']) for tt in task_types}
        workers.append(Worker(
            id=i,
            location=WorkerLocation(point=place.point, class_id=place_classes[place.id]),
            schedule=schedule,
            reliability=reliabilities[i],
            strategy=strategies[i],
            profile=build_profile(ActivityHistory(), schedule, place_classes, class_ids, task_types),
            type_reliability=type_reliability,
            multilabel_propensity=float(propensities[i]),
        ))
    busyness = dict(const.BUSYNESS)
    if config.busyness is not None:
        busyness = {c: 1.0 for c in class_ids}
        busyness.update(config.busyness)
    logger.info(kv('world_generated', workers=n, spammers=n_spam, places=len(places), seed=seed))
    return World(taxonomy=taxonomy, index=index, workers=tuple(workers), clock=0.0, seed=seed,
                 place_classes=place_classes, busyness=busyness)


def step_mobility(world: World, to: float) -> World:
    """
    時刻 to の予定区間の場所へ全ワーカーを移動させ、ロケーション分類を付け直す

    :param world: World
    :param to: 移動先の時刻 (秒)
    :return: 新しい World
    """
    if to < world.clock:
        raise ClockRegression('時刻を戻すことはできません: {to} < {clock}'.format(to=to, clock=world.clock))
    if to == world.clock:
        return world
    workers = []
    for w in world.workers:
        place = world.index.place(w.schedule.place_at(to))
        if place.point == w.location.point and world.place_classes[place.id] == w.location.class_id:
            workers.append(w)
            continue
        location = WorkerLocation(point=place.point, class_id=world.place_classes[place.id])
        workers.append(dataclasses.replace(w, location=location))
    return dataclasses.replace(world, workers=tuple(workers), clock=float(to))


def replace_profiles(world: World, profiles: Mapping[int, WorkerProfile]) -> World:
    if not profiles:
        return world
    workers = tuple(dataclasses.replace(w, profile=profiles[w.id]) if w.id in profiles else w
                    for w in world.workers)
    return dataclasses.replace(world, workers=workers)
