import math
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import (TYPE_CHECKING, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple,
                    Union)

import numpy as np

from pycrowdsimpy import const
from pycrowdsimpy.errors import (EmptyInput, EmptyMatrix, KeyMismatch, MissingWeight, NoAnswers,
                                 NonPositiveTime)
from pycrowdsimpy.modules import convert_to_jsonable, get_logger, kv

if TYPE_CHECKING:
    from pycrowdsimpy.World import ActivityHistory, WorkerProfile

logger = get_logger('Quality')

LabelEstimate = Union[int, FrozenSet[int]]


@dataclass(frozen=True)
class Answer:
    task_id: int
    question_id: int
    worker_id: int
    labels: FrozenSet[int]
    read_at: float
    sent_at: float

    def __post_init__(self):
        if not self.labels:
            raise ValueError('回答のラベルが空です')
        if not self.sent_at > self.read_at:
            raise NonPositiveTime('送信時刻は閲覧時刻より後にしてください')

    @property
    def response_seconds(self) -> float:
        return self.sent_at - self.read_at

    @property
    def label(self) -> int:
        """
        単一ラベル回答のラベル (複数ある場合は最小 ID)
        """
        return min(self.labels)


@dataclass(frozen=True)
class PrsParams:
    beta: float = const.PRS_BETA
    t_min: float = const.PRS_T_MIN
    per_type_beta: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.t_min > 0:
            raise ValueError('t_min は正の値にしてください')
        for beta in [self.beta] + list(self.per_type_beta.values()):
            if not beta > self.t_min:
                raise ValueError('beta は t_min より大きくしてください: beta={beta}'.format(beta=beta))

    def beta_for(self, task_type: Optional[int] = None) -> float:
        if task_type is not None and task_type in self.per_type_beta:
            return self.per_type_beta[task_type]
        return self.beta


@dataclass(frozen=True)
class CredibilityWeight:
    worker_id: int
    weight: float


@dataclass
class AggregationReport:
    method: str
    labels: Dict[int, LabelEstimate]
    accuracy: Optional[float] = None
    iterations: int = 0
    compute_seconds: float = 0.0

    def to_dict(self) -> dict:
        return convert_to_jsonable(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'AggregationReport':
        """
        to_dict の逆変換。複数ラベルの推定 (リスト) は frozenset に戻す
        """
        labels = {int(qid): frozenset(v) if isinstance(v, list) else int(v) for qid, v in data['labels'].items()}
        return cls(method=data['method'], labels=labels, accuracy=data.get('accuracy'),
                   iterations=int(data.get('iterations', 0)), compute_seconds=float(data.get('compute_seconds', 0.0)))


@dataclass(frozen=True)
class ArstReport:
    total: float
    mean: float
    max: float
    count: int


@dataclass(frozen=True)
class GamificationScore:
    worker_id: int
    score: float
    rank: int = 0


@dataclass
class EmResult:
    labels: Dict[int, int]
    confusions: Dict[int, np.ndarray]
    label_space: Tuple[int, ...]
    priors: np.ndarray
    iterations: int


def personal_response_time(p: PrsParams, t: float, task_type: Optional[int] = None) -> float:
    """
    個人応答時間スコア PRS = β / max(t, t_min)

    :param p: PRS のパラメーター
    :param t: 閲覧から回答送信までの秒数
    :param task_type: タスク種別 (種別ごとの β を使う場合)
    :return: PRS
    """
    if not t > 0:
        raise NonPositiveTime('応答時間は正の値にしてください: {t}'.format(t=t))
    return p.beta_for(task_type) / max(t, p.t_min)


def delta_to_beta(p: PrsParams, t: float, task_type: Optional[int] = None) -> float:
    if not t > 0:
        raise NonPositiveTime('応答時間は正の値にしてください: {t}'.format(t=t))
    return abs(p.beta_for(task_type) - t)


def aggregated_response_time(answers: Sequence[Answer]) -> ArstReport:
    """
    1タスク分の回答の集計応答時間 (ARST)。合計を主値とし、平均と最大も返す

    :param answers: 1タスクに対する回答
    :return: ArstReport
    """
    if not answers:
        raise NoAnswers('回答がありません')
    times = [a.sent_at - a.read_at for a in answers]
    total = math.fsum(times)
    return ArstReport(total=total, mean=total / len(times), max=max(times), count=len(times))


def _vote(tally: Mapping[int, float]) -> int:
    # 最多得票、同数なら最小のラベル ID
    return min(tally, key=lambda label: (-tally[label], label))


def majority_vote(answers: Sequence[Answer]) -> int:
    if not answers:
        raise NoAnswers('回答がありません')
    return _vote(Counter(a.label for a in answers))


def _weight_of(weights: Mapping[int, Union[float, CredibilityWeight]], worker_id: int) -> float:
    if worker_id not in weights:
        raise MissingWeight('ワーカー {w} の重みがありません'.format(w=worker_id))
    w = weights[worker_id]
    return w.weight if isinstance(w, CredibilityWeight) else float(w)


def weighted_majority(answers: Sequence[Answer],
                      weights: Mapping[int, Union[float, CredibilityWeight]]) -> int:
    """
    重み付き多数決。重みの合計が最大のラベル、同数なら最小のラベル ID

    :param answers: 1問分の回答
    :param weights: ワーカーID -> 重み (float または CredibilityWeight)
    :return: ラベル
    """
    if not answers:
        raise NoAnswers('回答がありません')
    tally = defaultdict(list)  # type: Dict[int, List[float]]
    for a in answers:
        tally[a.label].append(_weight_of(weights, a.worker_id))
    return _vote({label: math.fsum(ws) for label, ws in tally.items()})


def multilabel_aggregate(answers: Sequence[Answer],
                         threshold: float = 0.5,
                         candidates: Optional[Iterable[int]] = None,
                         weights: Optional[Mapping[int, Union[float, CredibilityWeight]]] = None) -> FrozenSet[int]:
    """
    複数ラベル問題の集約。ラベルを含む回答の割合が threshold 以上のラベルを返す (空集合もありうる)

    :param answers: 1問分の回答
    :param threshold: しきい値 θ (0, 1]
    :param candidates: 候補ラベル。指定した場合、出力は候補の部分集合に限る
    :param weights: 指定した場合は割合を重みで計算する
    :return: ラベル集合
    """
    if not answers:
        raise NoAnswers('回答がありません')
    if not 0.0 < threshold <= 1.0:
        raise ValueError('threshold は (0, 1] の範囲で指定してください')
    allowed = set(candidates) if candidates is not None else None
    if weights is None:
        total = float(len(answers))
        support = Counter(label for a in answers for label in a.labels)
    else:
        total = math.fsum(_weight_of(weights, a.worker_id) for a in answers)
        support = defaultdict(float)
        for a in answers:
            for label in a.labels:
                support[label] += _weight_of(weights, a.worker_id)
    return frozenset(label for label, count in support.items()
                     if count / total >= threshold and (allowed is None or label in allowed))


def em_aggregate(answers: Sequence[Answer],
                 max_iters: int = 50,
                 tol: float = 1e-6,
                 candidates: Optional[Mapping[int, Sequence[int]]] = None,
                 alpha: float = const.LAPLACE_ALPHA,
                 diagonal: float = const.EM_DIAGONAL_ALPHA) -> EmResult:
    """
    混同行列 EM (Dawid-Skene 型) による反復的な集約

    E ステップで現在の混同行列と事前分布から真のラベルの事後分布を求め、
    M ステップで混同行列と事前分布を推定し直す。
    事後分布は多数決の得票割合で初期化する。

    混同行列の擬似カウントは非対角 α、対角 α + diagonal。
    回答の少ないワーカーでも、混同行列の行は正答寄りになる。

    :param answers: 単一ラベル問題への回答
    :param max_iters: 最大反復回数
    :param tol: 事後分布の最大変化量がこれを下回ったら収束
    :param candidates: 問題ID -> 候補ラベル。省略時は回答に現れたラベル
    :param alpha: 混同行列の平滑化擬似カウント
    :param diagonal: 対角成分に上乗せする擬似カウント
    :return: EmResult
    """
    if not answers:
        raise EmptyMatrix('回答行列が空です')
    if max_iters < 1:
        raise ValueError('max_iters は 1 以上にしてください')
    if not tol > 0:
        raise ValueError('tol は正の値にしてください')
    if alpha <= 0 or diagonal < 0:
        raise ValueError('alpha は正、diagonal は 0 以上にしてください')

    question_ids = sorted({a.question_id for a in answers})
    worker_ids = sorted({a.worker_id for a in answers})
    labels = set(a.label for a in answers)
    if candidates:
        for qid in question_ids:
            labels.update(candidates.get(qid, ()))
    label_space = tuple(sorted(labels))
    q_index = {q: i for i, q in enumerate(question_ids)}
    w_index = {w: j for j, w in enumerate(worker_ids)}
    l_index = {l: k for k, l in enumerate(label_space)}
    n_q, n_w, n_l = len(question_ids), len(worker_ids), len(label_space)

    q_rows = np.array([q_index[a.question_id] for a in answers])
    w_cols = np.array([w_index[a.worker_id] for a in answers])
    l_cols = np.array([l_index[a.label] for a in answers])

    mask = np.ones((n_q, n_l), dtype=bool)
    if candidates:
        for qid, i in q_index.items():
            if qid in candidates:
                mask[i] = False
                mask[i, [l_index[c] for c in candidates[qid]]] = True

    counts = np.zeros((n_q, n_l))
    np.add.at(counts, (q_rows, l_cols), 1.0)
    posterior = counts / counts.sum(axis=1, keepdims=True)

    def _argmax_labels(post: np.ndarray) -> Dict[int, int]:
        # argmax は同値なら最初 (最小のラベルID) を返す
        return {qid: label_space[int(np.argmax(post[q_index[qid]]))] for qid in question_ids}

    answers_per_question = np.bincount(q_rows, minlength=n_q)
    if answers_per_question.max() <= 1:
        # 冗長性が無いので混同行列は推定できない
        return EmResult(labels=_argmax_labels(posterior), confusions={}, label_space=label_space,
                        priors=posterior.mean(axis=0), iterations=0)

    iterations = 0
    pseudo = np.full((n_l, n_l), float(alpha)) + float(diagonal) * np.eye(n_l)
    confusion = np.full((n_w, n_l, n_l), 1.0 / n_l)
    priors = np.full(n_l, 1.0 / n_l)
    for iterations in range(1, max_iters + 1):
        # M ステップ
        priors = (posterior.sum(axis=0) + alpha) / (n_q + n_l * alpha)
        confusion = np.tile(pseudo, (n_w, 1, 1))
        np.add.at(confusion, (w_cols, slice(None), l_cols), posterior[q_rows])
        confusion /= confusion.sum(axis=2, keepdims=True)

        # E ステップ
        log_post = np.tile(np.log(np.maximum(priors, 1e-12)), (n_q, 1))
        np.add.at(log_post, q_rows, np.log(confusion[w_cols, :, l_cols]))
        log_post[~mask] = -np.inf
        log_post -= log_post.max(axis=1, keepdims=True)
        updated = np.exp(log_post)
        updated /= updated.sum(axis=1, keepdims=True)

        change = float(np.abs(updated - posterior).max())
        posterior = updated
        if change < tol:
            break

    logger.debug(kv('em_converged', iterations=iterations, questions=n_q, workers=n_w))
    return EmResult(
        labels=_argmax_labels(posterior),
        confusions={w: confusion[j] for w, j in w_index.items()},
        label_space=label_space,
        priors=priors,
        iterations=iterations,
    )


def _as_label_set(value: LabelEstimate) -> FrozenSet[int]:
    if isinstance(value, (set, frozenset)):
        return frozenset(value)
    return frozenset([int(value)])


def accuracy(estimated: Mapping[int, LabelEstimate], truth: Mapping[int, LabelEstimate]) -> float:
    """
    accuracy = 正しくラベル付けされた対象の数 / 対象の総数。複数ラベルは集合の完全一致のみ正解

    :param estimated: 問題ID -> 推定ラベル
    :param truth: 問題ID -> 正解ラベル
    :return: 正解率
    """
    if not estimated or not truth:
        raise EmptyInput('推定結果または正解が空です')
    if set(estimated) != set(truth):
        raise KeyMismatch('推定結果と正解の問題IDが一致しません')
    correct = sum(1 for qid in truth if _as_label_set(estimated[qid]) == _as_label_set(truth[qid]))
    return correct / len(truth)


def credibility_weight(profile: 'WorkerProfile',
                       task_class: int,
                       w_min: float = const.CREDIBILITY_W_MIN,
                       worker_id: int = -1) -> CredibilityWeight:
    """
    移動パターン (分類ごとの滞在割合) から信頼度の重みを求める: w_min + (1 - w_min) * affinity

    :param profile: ワーカープロファイル
    :param task_class: タスクのロケーション分類ID
    :param w_min: 重みの下限 (0, 1)
    :param worker_id: ワーカーID
    :return: CredibilityWeight
    """
    if not 0.0 < w_min < 1.0:
        raise ValueError('w_min は (0, 1) の範囲で指定してください')
    affinity = profile.class_affinity.get(task_class, 0.0)
    return CredibilityWeight(worker_id=worker_id, weight=min(1.0, w_min + (1.0 - w_min) * affinity))


def gamification_score(history: 'ActivityHistory',
                       p: PrsParams,
                       half_life: float,
                       w_acc: float = 0.5,
                       w_eff: float = 0.5,
                       now: Optional[float] = None,
                       worker_id: int = -1) -> GamificationScore:
    """
    正確さと効率で評価し、関与の量に比例して加点するゲーミフィケーションスコア。
    古い記録は半減期 half_life で指数的に減衰する

    :param history: 活動履歴
    :param p: PRS のパラメーター
    :param half_life: 半減期 (秒)
    :param w_acc: 正確さの重み
    :param w_eff: 効率の重み (w_acc + w_eff = 1)
    :param now: 評価時刻。省略時は最後の記録の時刻
    :param worker_id: ワーカーID
    :return: GamificationScore
    """
    if not half_life > 0:
        raise ValueError('half_life は正の値にしてください')
    if w_acc < 0 or w_eff < 0 or not math.isclose(w_acc + w_eff, 1.0, abs_tol=1e-9):
        raise ValueError('w_acc + w_eff は 1 にしてください')
    records = [r for r in history.records if r.accepted]
    if not records:
        return GamificationScore(worker_id=worker_id, score=0.0)
    if now is None:
        now = history.records[-1].timestamp
    terms = []
    for r in records:
        age = max(0.0, now - r.timestamp)
        decay = 2.0 ** (-age / half_life)
        efficiency = min(1.0, personal_response_time(p, r.t, r.task_type))
        terms.append(decay * (w_acc * float(r.correct) + w_eff * efficiency))
    return GamificationScore(worker_id=worker_id, score=math.fsum(terms))


def rank_gamification(scores: Iterable[GamificationScore]) -> List[GamificationScore]:
    """
    スコアの降順 (同点はワーカーID昇順) に並べて 1 始まりの順位を付ける
    """
    ordered = sorted(scores, key=lambda s: (-s.score, s.worker_id))
    return [GamificationScore(worker_id=s.worker_id, score=s.score, rank=i + 1) for i, s in enumerate(ordered)]


def aggregate_question_set(method: str,
                           answers_by_question: Mapping[int, Sequence[Answer]],
                           multi_label: Mapping[int, bool],
                           candidates: Mapping[int, Sequence[int]],
                           weights: Optional[Mapping[int, Mapping[int, float]]] = None,
                           threshold: float = 0.5,
                           em_max_iters: int = 50,
                           em_tol: float = 1e-6,
                           truth: Optional[Mapping[int, LabelEstimate]] = None,
                           record_timings: bool = False) -> AggregationReport:
    """
    問題の集合を一つの手法でまとめて集約する。複数ラベル問題は常にしきい値投票で集約する

    :param method: 'majority' / 'weighted' / 'em'
    :param answers_by_question: 問題ID -> 回答
    :param multi_label: 問題ID -> 複数ラベル問題か
    :param candidates: 問題ID -> 候補ラベル
    :param weights: 問題ID -> (ワーカーID -> 重み)。weighted で必須
    :param threshold: 複数ラベルのしきい値 θ
    :param em_max_iters: EM の最大反復回数
    :param em_tol: EM の収束判定
    :param truth: 正解 (あれば accuracy を計算する)
    :param record_timings: 計算時間を記録するか
    :return: AggregationReport
    """
    if method not in const.AGGREGATION_METHODS:
        raise ValueError('未知の集約手法です: {m}'.format(m=method))
    started = time.perf_counter()
    estimates = {}  # type: Dict[int, LabelEstimate]
    iterations = 0
    answered = {qid: a for qid, a in answers_by_question.items() if a}
    single = {qid: a for qid, a in answered.items() if not multi_label.get(qid, False)}
    for qid, answers in answered.items():
        if qid in single:
            continue
        w = weights.get(qid) if (weights is not None and method == 'weighted') else None
        estimates[qid] = multilabel_aggregate(answers, threshold, candidates.get(qid), weights=w)
    if method == 'majority':
        for qid, answers in single.items():
            estimates[qid] = majority_vote(answers)
    elif method == 'weighted':
        if weights is None:
            raise MissingWeight('weighted には重みが必要です')
        for qid, answers in single.items():
            estimates[qid] = weighted_majority(answers, weights.get(qid, {}))
    elif single:
        flat = [a for qid in sorted(single) for a in single[qid]]
        result = em_aggregate(flat, max_iters=em_max_iters, tol=em_tol,
                              candidates={qid: candidates[qid] for qid in single if qid in candidates})
        estimates.update(result.labels)
        iterations = result.iterations
    elapsed = time.perf_counter() - started if record_timings else 0.0
    report = AggregationReport(method=method, labels=dict(sorted(estimates.items())),
                               iterations=iterations, compute_seconds=elapsed)
    if truth is not None and estimates:
        report.accuracy = accuracy(report.labels, {qid: truth[qid] for qid in report.labels})
    return report
