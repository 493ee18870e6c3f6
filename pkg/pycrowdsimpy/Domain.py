import enum
import json
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from pycrowdsimpy import const
from pycrowdsimpy.errors import InvalidGeoPoint, InvalidTaxonomy


@dataclass(frozen=True)
class GeoPoint:
    """
    地理座標 (10進数の度)。経度 180 は -180 に正規化する
    """
    lat: float
    lon: float

    def __post_init__(self):
        lat = float(self.lat)
        lon = float(self.lon)
        if math.isnan(lat) or not -90.0 <= lat <= 90.0:
            raise InvalidGeoPoint('緯度は -90 から 90 の範囲で指定してください: {lat}'.format(lat=self.lat))
        if math.isnan(lon) or not -180.0 <= lon <= 180.0:
            raise InvalidGeoPoint('経度は -180 から 180 の範囲で指定してください: {lon}'.format(lon=self.lon))
        if lon == 180.0:
            lon = -180.0
        object.__setattr__(self, 'lat', lat)
        object.__setattr__(self, 'lon', lon)


@dataclass(frozen=True)
class LocationClass:
    id: int
    name: str


@dataclass(frozen=True)
class LocationVariant:
    id: int
    parent: int
    name: str


@dataclass(frozen=True)
class TaskType:
    id: int
    name: str


class TaskKind(enum.Enum):
    NORMAL = 'normal'
    EMERGENCY = 'emergency'


@dataclass(frozen=True)
class WorkerLocation:
    point: GeoPoint
    class_id: int


@dataclass(frozen=True)
class Question:
    id: int
    candidates: Tuple[int, ...]
    multi_label: bool = False
    ground_truth: FrozenSet[int] = frozenset()


@dataclass(frozen=True)
class TaskContext:
    center: GeoPoint
    radius_m: float
    admissible_classes: FrozenSet[int] = frozenset()
    required_skill: Mapping[int, float] = field(default_factory=dict)

    def admits(self, class_id: int) -> bool:
        # 空集合はすべての分類を許可する
        return not self.admissible_classes or class_id in self.admissible_classes


@dataclass(frozen=True)
class Task:
    id: int
    kind: TaskKind
    task_type: int
    context: TaskContext
    questions: Tuple[Question, ...]
    payload_bytes: int = 0
    created_at: float = 0.0


@dataclass(frozen=True)
class Place:
    id: int
    point: GeoPoint
    class_id: int
    radius_m: float
    variant_id: Optional[int] = None


class Taxonomy:
    def __init__(self,
                 classes: Iterable[LocationClass],
                 task_types: Iterable[TaskType],
                 variants: Iterable[LocationVariant] = (),
                 default_class_id: int = const.DEFAULT_CLASS_ID):
        self.classes = {}  # type: Dict[int, LocationClass]
        for location_class in classes:
            if location_class.id in self.classes:
                raise InvalidTaxonomy('ロケーション分類の ID が重複しています: {id}'.format(id=location_class.id))
            if not location_class.name:
                raise InvalidTaxonomy('ロケーション分類の名前が空です: {id}'.format(id=location_class.id))
            self.classes[location_class.id] = location_class
        self.task_types = {}  # type: Dict[int, TaskType]
        for task_type in task_types:
            if task_type.id in self.task_types:
                raise InvalidTaxonomy('タスク種別の ID が重複しています: {id}'.format(id=task_type.id))
            self.task_types[task_type.id] = task_type
        self.variants = {}  # type: Dict[int, LocationVariant]
        for variant in variants:
            if variant.parent not in self.classes:
                raise InvalidTaxonomy('バリアントの親分類が存在しません: {name}'.format(name=variant.name))
            if variant.id in self.variants:
                raise InvalidTaxonomy('バリアントの ID が重複しています: {id}'.format(id=variant.id))
            self.variants[variant.id] = variant
        if default_class_id not in self.classes:
            raise InvalidTaxonomy('既定の分類が存在しません: {id}'.format(id=default_class_id))
        self.default_class_id = default_class_id

    @property
    def default_class(self) -> LocationClass:
        return self.classes[self.default_class_id]

    def class_ids(self) -> List[int]:
        return sorted(self.classes)

    def task_type_ids(self) -> List[int]:
        return sorted(self.task_types)

    @classmethod
    def default(cls) -> 'Taxonomy':
        return cls(
            classes=[LocationClass(id=i, name=n) for n, i in const.LOCATION_CLASS.items()],
            task_types=[TaskType(id=i, name=n) for n, i in const.TASK_TYPE.items()],
            variants=[LocationVariant(id=i, parent=p, name=n) for n, (i, p) in const.LOCATION_VARIANT.items()],
        )

    @classmethod
    def from_dict(cls, data: dict) -> 'Taxonomy':
        try:
            return cls(
                classes=[LocationClass(id=int(c['id']), name=c['name']) for c in data['classes']],
                task_types=[TaskType(id=int(t['id']), name=t['name']) for t in data['task_types']],
                variants=[LocationVariant(id=int(v['id']), parent=int(v['parent']), name=v['name'])
                          for v in data.get('variants', [])],
                default_class_id=int(data.get('default_class', const.DEFAULT_CLASS_ID)),
            )
        except (KeyError, TypeError) as e:
            raise InvalidTaxonomy('分類体系の JSON が不正です: {e}'.format(e=e)) from e

    def to_dict(self) -> dict:
        return {
            'classes': [{'id': c.id, 'name': c.name} for c in sorted(self.classes.values(), key=lambda c: c.id)],
            'task_types': [{'id': t.id, 'name': t.name} for t in sorted(self.task_types.values(), key=lambda t: t.id)],
            'variants': [{'id': v.id, 'parent': v.parent, 'name': v.name}
                         for v in sorted(self.variants.values(), key=lambda v: v.id)],
            'default_class': self.default_class_id,
        }


class LocationIndex:
    """
    名前付きの場所 (中心座標・分類・有効半径) の集合
    """

    def __init__(self, taxonomy: Taxonomy, places: Iterable[Place]):
        self.taxonomy = taxonomy
        self.places = tuple(sorted(places, key=lambda p: p.id))
        ids = [p.id for p in self.places]
        if len(set(ids)) != len(ids):
            raise InvalidTaxonomy('場所の ID が重複しています')
        for place in self.places:
            if place.class_id not in taxonomy.classes:
                raise InvalidTaxonomy('場所 {id} の分類が分類体系にありません'.format(id=place.id))
            if place.variant_id is not None and place.variant_id not in taxonomy.variants:
                raise InvalidTaxonomy('場所 {id} のバリアントが分類体系にありません'.format(id=place.id))
            if not place.radius_m > 0:
                raise InvalidTaxonomy('場所 {id} の半径は正の値にしてください'.format(id=place.id))
        self._by_id = {p.id: p for p in self.places}
        self._lats = np.array([p.point.lat for p in self.places], dtype=float)
        self._lons = np.array([p.point.lon for p in self.places], dtype=float)
        self._radii = np.array([p.radius_m for p in self.places], dtype=float)

    def __len__(self) -> int:
        return len(self.places)

    def place(self, place_id: int) -> Place:
        return self._by_id[place_id]

    def distances_from(self, p: GeoPoint) -> np.ndarray:
        return haversine_distance_vectorized(p.lat, p.lon, self._lats, self._lons)

    def containing_radii(self) -> np.ndarray:
        return self._radii


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """
    球面 (半径 6 371 000 m) 上の大円距離

    :param a: 地点A
    :param b: 地点B
    :return: 距離 (メートル)
    """
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return const.EARTH_RADIUS_M * 2 * math.atan2(math.sqrt(h), math.sqrt(max(0.0, 1 - h)))


def haversine_distance_vectorized(lat: float, lon: float, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    lat1, lon1 = math.radians(lat), math.radians(lon)
    lats2, lons2 = np.radians(lats), np.radians(lons)
    h = np.sin((lats2 - lat1) / 2) ** 2 + math.cos(lat1) * np.cos(lats2) * np.sin((lons2 - lon1) / 2) ** 2
    return const.EARTH_RADIUS_M * 2 * np.arctan2(np.sqrt(h), np.sqrt(np.clip(1 - h, 0.0, None)))


class ValidationReport:
    def __init__(self, violations: Optional[List[str]] = None):
        self.violations = violations or []

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return bool(self.violations)

    def __contains__(self, needle: str) -> bool:
        return any(needle in v for v in self.violations)

    def __repr__(self) -> str:
        return 'ValidationReport({violations!r})'.format(violations=self.violations)


def validate_task(task: Task,
                  taxonomy: Taxonomy,
                  emergency_max_radius: float = const.EMERGENCY_MAX_RADIUS_M) -> ValidationReport:
    """
    タスクの不変条件をすべて検査する。空のレポートは妥当なタスクを意味する

    :param task: 検査対象のタスク
    :param taxonomy: 分類体系
    :param emergency_max_radius: 緊急タスクの最大半径 (メートル)
    :return: ValidationReport
    """
    violations = []
    radius = task.context.radius_m
    if not radius > 0:
        violations.append('radius must be positive (task {id})'.format(id=task.id))
    if task.kind is TaskKind.EMERGENCY and (math.isinf(radius) or radius > emergency_max_radius):
        violations.append('emergency radius must be finite and <= {max} m (task {id})'.format(
            max=emergency_max_radius, id=task.id))
    if task.task_type not in taxonomy.task_types:
        violations.append('unknown task type {tt}'.format(tt=task.task_type))
    for class_id in sorted(task.context.admissible_classes):
        if class_id not in taxonomy.classes:
            violations.append('unknown location class {c}'.format(c=class_id))
    for tt, skill in task.context.required_skill.items():
        if not 0.0 <= skill <= 1.0:
            violations.append('required skill for type {tt} out of [0, 1]'.format(tt=tt))
    if task.payload_bytes < 0:
        violations.append('payload bytes must be non-negative')
    if not task.questions:
        violations.append('task has no questions')
    seen = set()
    for q in task.questions:
        if q.id in seen:
            violations.append('duplicate question id {q}'.format(q=q.id))
        seen.add(q.id)
        if len(set(q.candidates)) < 2:
            violations.append('too few labels in question {q}'.format(q=q.id))
        if len(set(q.candidates)) != len(q.candidates):
            violations.append('duplicate candidate labels in question {q}'.format(q=q.id))
        if not q.ground_truth <= set(q.candidates):
            violations.append('ground truth not within candidate labels in question {q}'.format(q=q.id))
        if not q.multi_label and len(q.ground_truth) > 1:
            violations.append('single-label question {q} has several true labels'.format(q=q.id))
    return ValidationReport(violations)


def classify_location(p: GeoPoint, index: LocationIndex) -> LocationClass:
    """
    p を有効半径内に含む最も近い場所の分類を返す。等距離なら ID の小さい場所を優先し、
    どこにも含まれなければ既定の分類 (open area) を返す

    :param p: 地点
    :param index: 場所の索引
    :return: LocationClass
    """
    if not len(index):
        return index.taxonomy.default_class
    distances = index.distances_from(p)
    inside = distances <= index.containing_radii()
    if not inside.any():
        return index.taxonomy.default_class
    candidates = np.where(inside, distances, np.inf)
    # argmin は最初の最小値を返す。places は ID 昇順
    nearest = int(np.argmin(candidates))
    return index.taxonomy.classes[index.places[nearest].class_id]


def place_from_dict(data: dict) -> Place:
    return Place(
        id=int(data['id']),
        point=GeoPoint(float(data['lat']), float(data['lon'])),
        class_id=int(data['class']),
        radius_m=float(data['radius_m']),
        variant_id=int(data['variant']) if data.get('variant') is not None else None,
    )


def place_to_dict(place: Place) -> dict:
    data = {
        'id': place.id,
        'lat': place.point.lat,
        'lon': place.point.lon,
        'class': place.class_id,
        'radius_m': place.radius_m,
    }
    if place.variant_id is not None:
        data['variant'] = place.variant_id
    return data


def load_taxonomy(path: str) -> Taxonomy:
    with open(path, encoding='utf-8') as f:
        return Taxonomy.from_dict(json.load(f))


def load_location_index(path: str, taxonomy: Optional[Taxonomy] = None) -> LocationIndex:
    """
    場所の索引を JSON から読み込む。taxonomy を省略した場合は同じ文書の分類体系、それも無ければ既定の分類体系を使う

    :param path: JSON ファイルのパス
    :param taxonomy: 分類体系
    :return: LocationIndex
    """
    with open(path, encoding='utf-8') as f:
        data = json.load(f)
    if taxonomy is None:
        taxonomy = Taxonomy.from_dict(data) if 'classes' in data else Taxonomy.default()
    try:
        places = [place_from_dict(p) for p in data['places']]
    except (KeyError, TypeError) as e:
        raise InvalidTaxonomy('場所の JSON が不正です: {e}'.format(e=e)) from e
    return LocationIndex(taxonomy, places)
