import csv
import enum
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from pycrowdsimpy.errors import NoData, TooFewPoints
from pycrowdsimpy.modules import get_logger, kv, rng_stream

logger = get_logger('GeoLearn')

FEATURE_NAMES = ('mean_accuracy', 'mean_prs', 'response_rate')
EFFICIENCY_CSV_HEADER = ['location_class', 'task_type', 'verdict', 'confidence', 'samples']


class Verdict(enum.Enum):
    EFFICIENT = 'efficient'
    INEFFICIENT = 'inefficient'


@dataclass(frozen=True)
class Observation:
    """
    配信済みの割り当て1件 (回答したか・正解したか・PRS)
    """
    class_id: int
    task_type: int
    answered: bool
    correct: bool = False
    prs: float = 0.0


@dataclass(frozen=True)
class LocationFeature:
    class_id: int
    task_type: int
    mean_accuracy: float
    mean_prs: float
    response_rate: float
    sample_count: int

    @property
    def key(self) -> Tuple[int, int]:
        return self.class_id, self.task_type

    def vector(self) -> List[float]:
        return [self.mean_accuracy, self.mean_prs, self.response_rate]


@dataclass
class FeatureSet:
    features: List[LocationFeature]
    standardized: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def __len__(self) -> int:
        return len(self.features)

    def position(self, key: Tuple[int, int]) -> Optional[int]:
        for i, f in enumerate(self.features):
            if f.key == key:
                return i
        return None


@dataclass(frozen=True)
class SeedLabel:
    class_id: int
    task_type: int
    verdict: Verdict


@dataclass(frozen=True)
class EfficiencyPair:
    class_id: int
    task_type: int
    verdict: Verdict
    confidence: float
    samples: int = 0


@dataclass
class ClusterResult:
    assignment: List[int]
    centroids: np.ndarray
    cluster_verdicts: Dict[int, Verdict] = field(default_factory=dict)
    pinned: Dict[int, int] = field(default_factory=dict)
    iterations: int = 0
    degenerate: bool = False

    def members(self, cluster: int) -> List[int]:
        return [i for i, c in enumerate(self.assignment) if c == cluster]


def featurize(observations: Iterable[Observation], min_samples: int = 20) -> FeatureSet:
    """
    (ロケーション分類, タスク種別) ごとに観測を集計し、標準化した特徴量にする

    :param observations: 配信済み割り当ての観測
    :param min_samples: 含める組み合わせの最小観測数
    :return: FeatureSet
    """
    groups = OrderedDict()  # type: Dict[Tuple[int, int], List[Observation]]
    for o in observations:
        groups.setdefault((o.class_id, o.task_type), []).append(o)
    if not groups:
        raise NoData('観測がありません')
    features = []
    for key in sorted(groups):
        group = groups[key]
        if len(group) < min_samples:
            continue
        answered = [o for o in group if o.answered]
        features.append(LocationFeature(
            class_id=key[0],
            task_type=key[1],
            mean_accuracy=(sum(1 for o in answered if o.correct) / len(answered)) if answered else 0.0,
            mean_prs=(math.fsum(o.prs for o in answered) / len(answered)) if answered else 0.0,
            response_rate=len(answered) / len(group),
            sample_count=len(group),
        ))
    if not features:
        raise NoData('min_samples={n} を満たす組み合わせがありません'.format(n=min_samples))
    raw = np.array([f.vector() for f in features], dtype=float)
    mean = raw.mean(axis=0)
    scale = raw.std(axis=0)
    scale[scale == 0] = 1.0
    return FeatureSet(features=features, standardized=(raw - mean) / scale, mean=mean, scale=scale)


def _nearest(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    distances = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    # argmin は同距離なら添字の小さいクラスタ
    return np.argmin(distances, axis=1)


def seeded_cluster(features: FeatureSet,
                   seeds: Sequence[SeedLabel] = (),
                   k: int = 2,
                   max_iters: int = 100,
                   tol: float = 1e-6,
                   seed: int = 0) -> ClusterResult:
    """
    シード付き k-means。シードのある点は判定ごとのクラスタに固定する

    重心はシード点の判定ごとの平均 (効率的=0、非効率=1) で初期化し、
    残りは最遠点選択で選ぶ。重心の移動量が tol 未満か max_iters で終了する。

    :param features: featurize の結果
    :param seeds: シードラベル
    :param k: クラスタ数 (2 以上)
    :param max_iters: 最大反復回数
    :param tol: 収束判定
    :param seed: 乱数シード (シードラベルが無い場合の最初の重心)
    :return: ClusterResult
    """
    if k < 2:
        raise ValueError('k は 2 以上にしてください')
    points = features.standardized
    n = len(points)
    if n < k:
        raise TooFewPoints('点の数 {n} がクラスタ数 {k} より少ないです'.format(n=n, k=k))

    by_verdict = OrderedDict([(Verdict.EFFICIENT, []), (Verdict.INEFFICIENT, [])])  # type: Dict[Verdict, List[int]]
    for s in seeds:
        position = features.position((s.class_id, s.task_type))
        if position is None:
            logger.warning(kv('seed_ignored', location_class=s.class_id, task_type=s.task_type))
            continue
        by_verdict[s.verdict].append(position)

    centroids = []
    cluster_verdicts = {}
    pinned = {}
    for verdict, positions in by_verdict.items():
        if not positions:
            continue
        cluster = len(centroids)
        centroids.append(points[positions].mean(axis=0))
        cluster_verdicts[cluster] = verdict
        for position in positions:
            pinned[position] = cluster
    if not centroids:
        centroids.append(points[int(rng_stream(seed, 'geolearn').integers(n))])
    while len(centroids) < k:
        chosen = np.array(centroids)
        gaps = ((points[:, None, :] - chosen[None, :, :]) ** 2).sum(axis=2).min(axis=1)
        centroids.append(points[int(np.argmax(gaps))])
    centroids = np.array(centroids, dtype=float)

    assignment = np.zeros(n, dtype=int)
    iterations = 0
    for iterations in range(1, max_iters + 1):
        assignment = _nearest(points, centroids)
        for position, cluster in pinned.items():
            assignment[position] = cluster
        updated = centroids.copy()
        for cluster in range(k):
            members = assignment == cluster
            if members.any():
                updated[cluster] = points[members].mean(axis=0)
        shift = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated
        if shift < tol:
            break
    assignment = _nearest(points, centroids)
    for position, cluster in pinned.items():
        assignment[position] = cluster

    sizes = np.bincount(assignment, minlength=k)
    degenerate = bool((sizes == 0).any())
    if degenerate:
        logger.warning(kv('degenerate_clusters', k=k, empty=int((sizes == 0).sum())))
    return ClusterResult(assignment=[int(c) for c in assignment], centroids=centroids,
                         cluster_verdicts=cluster_verdicts, pinned=pinned, iterations=iterations,
                         degenerate=degenerate)


def _margin(value: float, threshold: float, span: float) -> float:
    return max(-1.0, min(1.0, (value - threshold) / span)) if span > 0 else 0.0


def label_efficiency(clusters: ClusterResult,
                     features: FeatureSet,
                     acc_threshold: float = 0.7,
                     prs_threshold: float = 0.5) -> List[EfficiencyPair]:
    """
    クラスタの重心 (標準化前) が正解率・PRS ともにしきい値以上なら効率的と判定し、
    所属する組み合わせすべてに判定を付ける。確信度はしきい値面からの余裕を [0, 1] に正規化したもの

    :param clusters: seeded_cluster の結果
    :param features: featurize の結果
    :param acc_threshold: 正解率のしきい値 [0, 1]
    :param prs_threshold: PRS のしきい値 (正)
    :return: EfficiencyPair のリスト
    """
    if not 0.0 <= acc_threshold <= 1.0:
        raise ValueError('acc_threshold は [0, 1] の範囲で指定してください')
    if not prs_threshold > 0:
        raise ValueError('prs_threshold は正の値にしてください')
    acc_span = max(acc_threshold, 1.0 - acc_threshold)
    verdicts = {}
    for cluster in sorted(set(clusters.assignment)):
        members = clusters.members(cluster)
        acc = float(np.mean([features.features[i].mean_accuracy for i in members]))
        prs = float(np.mean([features.features[i].mean_prs for i in members]))
        verdicts[cluster] = (Verdict.EFFICIENT if acc >= acc_threshold and prs >= prs_threshold
                             else Verdict.INEFFICIENT)
    pairs = []
    for i, f in enumerate(features.features):
        verdict = verdicts[clusters.assignment[i]]
        surface = min(_margin(f.mean_accuracy, acc_threshold, acc_span),
                      _margin(f.mean_prs, prs_threshold, prs_threshold))
        agrees = (surface >= 0) == (verdict is Verdict.EFFICIENT)
        pairs.append(EfficiencyPair(class_id=f.class_id, task_type=f.task_type, verdict=verdict,
                                    confidence=abs(surface) if agrees else 0.0, samples=f.sample_count))
    return pairs


def learn_locations(observations: Iterable[Observation],
                    seeds: Sequence[SeedLabel] = (),
                    k: int = 2,
                    min_samples: int = 20,
                    acc_threshold: float = 0.7,
                    prs_threshold: float = 0.5,
                    max_iters: int = 100,
                    tol: float = 1e-6,
                    seed: int = 0) -> List[EfficiencyPair]:
    """
    featurize -> seeded_cluster -> label_efficiency を1回通す
    """
    features = featurize(observations, min_samples)
    clusters = seeded_cluster(features, seeds, k=k, max_iters=max_iters, tol=tol, seed=seed)
    return label_efficiency(clusters, features, acc_threshold, prs_threshold)


def efficiency_lookup(pairs: Iterable[EfficiencyPair]) -> Dict[Tuple[int, int], bool]:
    return {(p.class_id, p.task_type): p.verdict is Verdict.EFFICIENT for p in pairs}


def verdict_churn(previous: Iterable[EfficiencyPair], current: Iterable[EfficiencyPair]) -> float:
    """
    前回と今回の両方にある組み合わせのうち判定が変わった割合
    """
    before = {(p.class_id, p.task_type): p.verdict for p in previous}
    after = {(p.class_id, p.task_type): p.verdict for p in current}
    common = set(before) & set(after)
    if not common:
        return 0.0
    return sum(1 for key in common if before[key] is not after[key]) / len(common)


def observations_from_events(events: Iterable[Mapping]) -> List[Observation]:
    """
    イベントログ (events.jsonl の各行) から配信済み割り当ての観測を組み立てる
    """
    delivered = OrderedDict()  # type: Dict[Tuple[int, int, int], Mapping]
    answers = {}  # type: Dict[Tuple[int, int, int], Mapping]
    for e in events:
        key = (int(e['task']), int(e['question']), int(e['worker']))
        if e.get('type') == 'delivery' and e.get('outcome') == 'delivered':
            delivered[key] = e
        elif e.get('type') == 'answer':
            answers[key] = e
    observations = []
    for key, e in delivered.items():
        answer = answers.get(key)
        observations.append(Observation(
            class_id=int(e['location_class']),
            task_type=int(e['task_type']),
            answered=answer is not None,
            correct=bool(answer['correct']) if answer is not None else False,
            prs=float(answer['prs']) if answer is not None else 0.0,
        ))
    return observations


def seed_from_dict(data: Mapping) -> SeedLabel:
    class_id = data['location_class'] if 'location_class' in data else data['class_id']
    return SeedLabel(class_id=int(class_id), task_type=int(data['task_type']), verdict=Verdict(data['verdict']))


def write_efficiency_pairs(pairs: Iterable[EfficiencyPair], path: str) -> None:
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(EFFICIENCY_CSV_HEADER)
        for p in sorted(pairs, key=lambda p: (p.class_id, p.task_type)):
            writer.writerow([p.class_id, p.task_type, p.verdict.value, '{:.6f}'.format(p.confidence), p.samples])
