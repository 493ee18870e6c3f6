import enum
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from pycrowdsimpy.Domain import Task, TaskKind, haversine_distance
from pycrowdsimpy.errors import NoEvents, NotEmergency, NoWorkers
from pycrowdsimpy.modules import get_logger, kv
from pycrowdsimpy.World import Worker, World

logger = get_logger('Dispatch')


class DispatchMode(enum.Enum):
    RANKED = 'ranked'
    RANDOM = 'random'
    GEOFENCED = 'geofenced'
    BLIND = 'blind'


class Outcome(enum.Enum):
    DELIVERED = 'delivered'
    FAILED = 'failed'
    UNREACHABLE = 'unreachable'


@dataclass(frozen=True)
class ContextWeights:
    w_geo: float = 1.0
    w_class: float = 1.0
    w_skill: float = 1.0
    w_prior: float = 0.0

    def __post_init__(self):
        if min(self.w_geo, self.w_class, self.w_skill, self.w_prior) < 0:
            raise ValueError('コンテキストの重みは非負にしてください')
        if not self.w_geo + self.w_class + self.w_skill > 0:
            raise ValueError('w_geo + w_class + w_skill は正にしてください')

    def scaled(self, c: float) -> 'ContextWeights':
        return ContextWeights(self.w_geo * c, self.w_class * c, self.w_skill * c, self.w_prior * c)


@dataclass(frozen=True)
class NetworkModel:
    availability_prob: float = 1.0
    delivery_failure_prob: float = 0.0
    per_message_overhead_bytes: int = 0

    def __post_init__(self):
        if not 0.0 <= self.availability_prob <= 1.0:
            raise ValueError('availability_prob は [0, 1] の範囲で指定してください')
        if not 0.0 <= self.delivery_failure_prob <= 1.0:
            raise ValueError('delivery_failure_prob は [0, 1] の範囲で指定してください')
        if self.per_message_overhead_bytes < 0:
            raise ValueError('per_message_overhead_bytes は 0 以上にしてください')


@dataclass(frozen=True)
class Assignment:
    task_id: int
    question_id: int
    worker_id: int
    dispatched_at: float
    delivered: bool
    payload_bytes: int

    @property
    def key(self) -> Tuple[int, int, int]:
        return self.task_id, self.question_id, self.worker_id


@dataclass(frozen=True)
class DeliveryEvent:
    task_id: int
    question_id: int
    worker_id: int
    outcome: Outcome
    bytes: int
    timestamp: float
    class_id: int = -1
    task_type: int = -1

    def to_dict(self) -> dict:
        return OrderedDict([
            ('type', 'delivery'),
            ('task', self.task_id),
            ('question', self.question_id),
            ('worker', self.worker_id),
            ('outcome', self.outcome.value),
            ('bytes', self.bytes),
            ('timestamp', self.timestamp),
            ('location_class', self.class_id),
            ('task_type', self.task_type),
        ])


@dataclass(frozen=True)
class NetworkMetrics:
    av: float
    tu: float
    fail_r: float
    attempted: int
    delivered: int
    failed: int
    unreachable: int

    @property
    def reachable_fail_r(self) -> float:
        """
        到達できた試行のうち配信に失敗した割合
        """
        reachable = self.attempted - self.unreachable
        return self.failed / reachable if reachable else 0.0


@dataclass
class DispatchResult:
    assignments: List[Assignment] = field(default_factory=list)
    events: List[DeliveryEvent] = field(default_factory=list)

    @property
    def delivered(self) -> List[Assignment]:
        return [a for a in self.assignments if a.delivered]


def context_distance(worker: Worker,
                     task: Task,
                     w: ContextWeights,
                     efficiency: Optional[Mapping[Tuple[int, int], bool]] = None) -> float:
    """
    ワーカーのコンテキストとタスクのコンテキストの距離

    d = w_geo * min(1, 距離 / 半径) + w_class * [許可されない分類] + w_skill * (1 - skill[タスク種別])
    efficiency (分類, 種別) -> 効率的か が与えられた場合、非効率な組み合わせに w_prior を加える

    :param worker: ワーカー
    :param task: タスク
    :param w: 重み
    :param efficiency: 学習済みの効率判定
    :return: 非負の距離
    """
    radius = task.context.radius_m
    if math.isinf(radius):
        geo = 0.0
    else:
        geo = min(1.0, haversine_distance(worker.location.point, task.context.center) / radius)
    mismatch = 0.0 if task.context.admits(worker.location.class_id) else 1.0
    skill = worker.profile.skill.get(task.task_type, 0.5)
    d = w.w_geo * geo + w.w_class * mismatch + w.w_skill * (1.0 - skill)
    if efficiency is not None and w.w_prior > 0:
        verdict = efficiency.get((worker.location.class_id, task.task_type))
        if verdict is False:
            d += w.w_prior
    return d


def rank_candidates(task: Task,
                    workers: Sequence[Worker],
                    w: ContextWeights,
                    limit: Optional[int] = None,
                    efficiency: Optional[Mapping[Tuple[int, int], bool]] = None) -> List[Worker]:
    """
    コンテキスト距離の昇順 (同値はワーカーID昇順) にワーカーを並べる

    :param task: タスク
    :param workers: 候補ワーカー
    :param w: 重み
    :param limit: 返す人数の上限 (fanout)
    :param efficiency: 学習済みの効率判定
    :return: 並べ替えたワーカー
    """
    if not workers:
        raise NoWorkers('候補ワーカーがいません')
    ranked = sorted(workers, key=lambda worker: (context_distance(worker, task, w, efficiency), worker.id))
    if limit is not None:
        ranked = ranked[:limit]
    return ranked


def inside_geofence(task: Task, workers: Iterable[Worker]) -> List[Worker]:
    return [w for w in workers if haversine_distance(w.location.point, task.context.center) <= task.context.radius_m]


def select_workers(task: Task,
                   workers: Sequence[Worker],
                   w: ContextWeights,
                   fanout: int,
                   mode: DispatchMode,
                   rng: np.random.Generator,
                   efficiency: Optional[Mapping[Tuple[int, int], bool]] = None) -> List[Worker]:
    """
    割り当てモードに従って fanout 人のワーカーを選ぶ
    """
    if not workers:
        raise NoWorkers('候補ワーカーがいません')
    if mode is DispatchMode.RANDOM:
        k = min(fanout, len(workers))
        picked = rng.choice(len(workers), size=k, replace=False)
        return [workers[int(i)] for i in picked]
    if mode is DispatchMode.BLIND:
        return rank_candidates(task, workers, ContextWeights(0.0, 0.0, max(w.w_skill, 1e-9)), fanout)
    ranked = rank_candidates(task, workers, w, None, efficiency)
    if mode is DispatchMode.GEOFENCED:
        fenced = {x.id for x in inside_geofence(task, ranked) if task.context.admits(x.location.class_id)}
        ranked = [x for x in ranked if x.id in fenced] + [x for x in ranked if x.id not in fenced]
    return ranked[:fanout]


def _deliver(task: Task,
             workers: Sequence[Worker],
             net: NetworkModel,
             rng: np.random.Generator,
             at: float) -> DispatchResult:
    result = DispatchResult()
    payload = task.payload_bytes + net.per_message_overhead_bytes
    for worker in workers:
        for question in task.questions:
            # 到達可否と配信失敗は割り当てごとに独立に引く
            reachable = rng.random() < net.availability_prob
            failed = rng.random() < net.delivery_failure_prob
            if not reachable:
                outcome, size = Outcome.UNREACHABLE, 0
            elif failed:
                outcome, size = Outcome.FAILED, payload
            else:
                outcome, size = Outcome.DELIVERED, payload
            delivered = outcome is Outcome.DELIVERED
            result.assignments.append(Assignment(task_id=task.id, question_id=question.id, worker_id=worker.id,
                                                 dispatched_at=at, delivered=delivered, payload_bytes=payload))
            result.events.append(DeliveryEvent(task_id=task.id, question_id=question.id, worker_id=worker.id,
                                               outcome=outcome, bytes=size, timestamp=at,
                                               class_id=worker.location.class_id, task_type=task.task_type))
    return result


def dispatch_task(task: Task,
                  world: World,
                  w: ContextWeights,
                  net: NetworkModel,
                  fanout: int,
                  rng: np.random.Generator,
                  mode: DispatchMode = DispatchMode.RANKED,
                  candidates: Optional[Sequence[Worker]] = None,
                  efficiency: Optional[Mapping[Tuple[int, int], bool]] = None) -> DispatchResult:
    """
    上位 fanout 人のワーカーへ各問題を割り当て、模擬ネットワークで配信する

    :param task: タスク
    :param world: World
    :param w: コンテキストの重み
    :param net: ネットワークモデル
    :param fanout: 1問あたりの回答者数 k
    :param rng: 乱数 (同じ状態なら同じ結果)
    :param mode: 割り当てモード
    :param candidates: 候補ワーカー (省略時は world の全ワーカー)
    :param efficiency: 学習済みの効率判定 (ランキングの事前情報)
    :return: DispatchResult
    """
    if fanout < 1:
        raise ValueError('fanout は 1 以上にしてください')
    pool = list(world.workers if candidates is None else candidates)
    chosen = select_workers(task, pool, w, fanout, mode, rng, efficiency)
    result = _deliver(task, chosen, net, rng, task.created_at)
    logger.debug(kv('dispatch', task=task.id, mode=mode.value, workers=len(chosen),
                    delivered=len(result.delivered)))
    return result


def emergency_broadcast(task: Task, world: World, net: NetworkModel, rng: np.random.Generator) -> DispatchResult:
    """
    緊急タスクをジオフェンス内の全ワーカーへ配信する (プロファイルによる順位付けはしない)

    :param task: 緊急タスク
    :param world: World
    :param net: ネットワークモデル
    :param rng: 乱数
    :return: DispatchResult
    """
    if task.kind is not TaskKind.EMERGENCY:
        raise NotEmergency('緊急タスクではありません: {id}'.format(id=task.id))
    targets = sorted(inside_geofence(task, world.workers), key=lambda w: w.id)
    result = _deliver(task, targets, net, rng, task.created_at)
    logger.debug(kv('broadcast', task=task.id, targets=len(targets), delivered=len(result.delivered)))
    return result


def network_metrics(events: Sequence[DeliveryEvent]) -> NetworkMetrics:
    """
    Av = 到達できた数 / 試行数、FailR = 配信できなかった数 (未到達を含む) / 試行数、
    Tu = 配信できたメッセージのバイト数の平均

    network.csv の fail_r 列はこの FailR (未到達を含む)。到達できた試行だけで数えた失敗率は
    reachable_fail_r 列に出す

    :param events: 配信イベント
    :return: NetworkMetrics
    """
    attempted = len(events)
    if not attempted:
        raise NoEvents('配信イベントがありません')
    delivered = [e for e in events if e.outcome is Outcome.DELIVERED]
    failed = sum(1 for e in events if e.outcome is Outcome.FAILED)
    unreachable = sum(1 for e in events if e.outcome is Outcome.UNREACHABLE)
    tu = math.fsum(e.bytes for e in delivered) / len(delivered) if delivered else 0.0
    return NetworkMetrics(
        av=(attempted - unreachable) / attempted,
        tu=tu,
        fail_r=(failed + unreachable) / attempted,
        attempted=attempted,
        delivered=len(delivered),
        failed=failed,
        unreachable=unreachable,
    )


def network_metrics_by_task(events: Sequence[DeliveryEvent]) -> Dict[int, NetworkMetrics]:
    grouped = OrderedDict()  # type: Dict[int, List[DeliveryEvent]]
    for e in sorted(events, key=lambda e: e.task_id):
        grouped.setdefault(e.task_id, []).append(e)
    return {task_id: network_metrics(group) for task_id, group in grouped.items()}
