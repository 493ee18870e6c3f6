import csv
import dataclasses
import enum
import hashlib
import io
import json
import math
import os
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from pycrowdsimpy import const
from pycrowdsimpy.Dispatch import (Assignment, DeliveryEvent, DispatchMode, NetworkMetrics, dispatch_task,
                                   emergency_broadcast, inside_geofence, network_metrics,
                                   network_metrics_by_task)
from pycrowdsimpy.Domain import (GeoPoint, Question, Task, TaskContext, TaskKind, classify_location,
                                 validate_task)
from pycrowdsimpy.errors import ExportError, InvalidConfig, InvalidSpec, NoData, NoEvents, TooFewPoints
from pycrowdsimpy.GeoLearn import (EFFICIENCY_CSV_HEADER, EfficiencyPair, Observation, efficiency_lookup,
                                   learn_locations, observations_from_events, verdict_churn,
                                   write_efficiency_pairs)
from pycrowdsimpy.modules import Settings, canonical_json, get_logger, kv, load_settings, rng_stream
from pycrowdsimpy.Quality import (AggregationReport, Answer, ArstReport, GamificationScore,
                                  aggregate_question_set, aggregated_response_time, credibility_weight,
                                  delta_to_beta, gamification_score, personal_response_time,
                                  rank_gamification)
from pycrowdsimpy.SimConfigure import ScenarioConfig
from pycrowdsimpy.World import (ActivityHistory, ActivityRecord, StrategyKind, Worker, WorkerProfile, World,
                                build_profile, generate_world, record_activity, replace_profiles,
                                step_mobility)

logger = get_logger('Harness')

AGGREGATION_CSV_HEADER = ['method', 'answers_per_question', 'questions_per_worker', 'spammer_ratio', 'accuracy',
                          'compute_seconds']
QUESTIONS_CSV_HEADER = ['question', 'task', 'method', 'estimate', 'truth', 'correct']
NETWORK_CSV_HEADER = ['scope', 'task', 'av', 'tu', 'fail_r', 'reachable_fail_r', 'attempted', 'delivered', 'failed',
                      'unreachable']
SUMMARY_CSV_HEADER = ['axis', 'axis_value', 'method', 'mean_accuracy', 'std_accuracy', 'runs']


class SweepAxis(enum.Enum):
    ANSWERS_PER_QUESTION = 'AnswersPerQuestion'
    QUESTIONS_PER_WORKER = 'QuestionsPerWorker'
    SPAMMER_RATIO = 'SpammerRatio'

    @classmethod
    def parse(cls, name: str) -> 'SweepAxis':
        if name in const.SWEEP_AXIS:
            name = const.SWEEP_AXIS[name]
        try:
            return cls(name)
        except ValueError as e:
            raise InvalidSpec('未知のスイープ軸です: {name}'.format(name=name)) from e


@dataclass(frozen=True)
class EmergencyStat:
    inside: int
    reached: int
    first_answer_s: Optional[float]

    @property
    def coverage(self) -> float:
        return self.reached / self.inside if self.inside else 0.0


@dataclass
class ResultSet:
    config: Optional[ScenarioConfig] = None
    fingerprint: str = ''
    tasks: List[Task] = field(default_factory=list)
    events: List[dict] = field(default_factory=list)
    assignments: List[Assignment] = field(default_factory=list)
    answers: List[Answer] = field(default_factory=list)
    aggregation: Dict[str, AggregationReport] = field(default_factory=dict)
    answered_fraction: float = 0.0
    network: Optional[NetworkMetrics] = None
    network_by_task: Dict[int, NetworkMetrics] = field(default_factory=dict)
    arst: Dict[int, ArstReport] = field(default_factory=dict)
    profiles: Dict[int, WorkerProfile] = field(default_factory=dict)
    strategies: Dict[int, str] = field(default_factory=dict)
    gamification: List[GamificationScore] = field(default_factory=list)
    efficiency_pairs: List[EfficiencyPair] = field(default_factory=list)
    emergency: Dict[int, EmergencyStat] = field(default_factory=dict)

    def accuracy_of(self, method: str) -> Optional[float]:
        report = self.aggregation.get(method)
        return report.accuracy if report is not None else None

    def observations(self) -> List[Observation]:
        return observations_from_events(self.events)

    def mean_prs(self) -> float:
        scores = [e['prs'] for e in self.events if e['type'] == 'answer']
        return math.fsum(scores) / len(scores) if scores else 0.0

    def mean_response_s(self) -> float:
        times = [a.response_seconds for a in self.answers]
        return math.fsum(times) / len(times) if times else 0.0

    def questions_per_worker(self) -> float:
        workers = {a.worker_id for a in self.answers}
        return len(self.answers) / len(workers) if workers else 0.0


@dataclass
class SweepSpec:
    axis: SweepAxis
    values: List[float]
    base: ScenarioConfig
    repetitions: int = 1
    target_accuracy: float = 0.9

    def validate(self) -> None:
        if not self.values:
            raise InvalidSpec('スイープの値が空です')
        if self.repetitions < 1:
            raise InvalidSpec('repetitions は 1 以上にしてください')
        if any(v < 0 for v in self.values):
            raise InvalidSpec('スイープの値は非負にしてください')
        if self.axis is not SweepAxis.SPAMMER_RATIO and any(v < 1 or v != int(v) for v in self.values):
            raise InvalidSpec('{axis} の値は 1 以上の整数にしてください'.format(axis=self.axis.value))
        if not 0.0 <= self.target_accuracy <= 1.0:
            raise InvalidSpec('target_accuracy は [0, 1] の範囲で指定してください')


@dataclass(frozen=True)
class SweepRow:
    axis_value: float
    method: str
    mean_accuracy: float
    std_accuracy: float
    runs: int


@dataclass
class SweepResult:
    spec: SweepSpec
    result_sets: List[ResultSet]
    rows: List[SweepRow]
    thresholds: Dict[str, Optional[float]]


@dataclass
class Comparison:
    hypothesis: str
    metric: str
    treatment: str
    baseline: str
    treatment_values: List[float]
    baseline_values: List[float]
    flags: List[str] = field(default_factory=list)

    @property
    def treatment_mean(self) -> float:
        return float(np.mean(self.treatment_values)) if self.treatment_values else 0.0

    @property
    def baseline_mean(self) -> float:
        return float(np.mean(self.baseline_values)) if self.baseline_values else 0.0

    @property
    def difference(self) -> float:
        return self.treatment_mean - self.baseline_mean

    @property
    def stderr(self) -> float:
        diffs = np.array(self.treatment_values) - np.array(self.baseline_values)
        return float(stats.sem(diffs)) if len(diffs) > 1 else 0.0


@dataclass
class HypothesisReport:
    seeds: List[int]
    comparisons: List[Comparison]
    method: str = 'majority'

    def get(self, hypothesis: str, metric: str) -> Comparison:
        for c in self.comparisons:
            if c.hypothesis == hypothesis and c.metric == metric:
                return c
        raise KeyError((hypothesis, metric))


@dataclass
class RoundReport:
    round: int
    seed: int
    pairs: List[EfficiencyPair]
    churn: float
    accuracy: Optional[float]


def majority_accuracy_closed_form(k: int, p: float) -> float:
    """
    2値問題で正解確率 p の回答者 k 人の多数決が正解する確率。偶数 k の同数は 1/2 で正解とみなす

    :param k: 1問あたりの回答数
    :param p: 回答者の正解確率
    :return: 多数決の正解確率
    """
    if k < 1:
        raise ValueError('k は 1 以上にしてください')
    wins = float(stats.binom.sf(k // 2, k, p))
    if k % 2 == 0:
        wins += 0.5 * float(stats.binom.pmf(k // 2, k, p))
    return wins


def generate_tasks(config: ScenarioConfig, world: World) -> List[Task]:
    """
    設定に従ってタスクを生成する。タスクIDは到着時刻の順
    """
    tasks_config = config.tasks
    rng = rng_stream(config.seed, 'tasks')
    kinds = []
    for c in tasks_config.counts:
        kinds.extend([(c.task_type, TaskKind(c.kind))] * c.count)
    order = rng.permutation(len(kinds))
    arrivals = np.sort(rng.uniform(0.0, config.duration_s, len(kinds)))
    labels = tuple(range(tasks_config.labels_per_question))
    places = world.index.places
    area = config.world
    tasks = []
    for task_id, (position, created_at) in enumerate(zip(order, arrivals)):
        task_type, kind = kinds[int(position)]
        if tasks_config.placement == 'places':
            center = places[int(rng.integers(len(places)))].point
        else:
            distance = area.area_radius_m * math.sqrt(rng.uniform())
            bearing = rng.uniform(0, 2 * math.pi)
            lat = area.area_center.lat + math.degrees(distance * math.cos(bearing) / const.EARTH_RADIUS_M)
            lon = area.area_center.lon + math.degrees(
                distance * math.sin(bearing) / (const.EARTH_RADIUS_M * math.cos(math.radians(area.area_center.lat))))
            center = GeoPoint(max(-90.0, min(90.0, lat)), (lon + 180.0) % 360.0 - 180.0)
        questions = []
        for j in range(tasks_config.questions_per_task):
            multi = bool(rng.random() < tasks_config.multi_label_fraction)
            if multi:
                truth = frozenset(l for l in labels if rng.random() < 0.5) or frozenset([int(rng.integers(len(labels)))])
            else:
                truth = frozenset([int(rng.integers(len(labels)))])
            questions.append(Question(id=task_id * tasks_config.questions_per_task + j, candidates=labels,
                                      multi_label=multi, ground_truth=truth))
        radius = tasks_config.emergency_radius_m if kind is TaskKind.EMERGENCY else tasks_config.task_radius_m
        task = Task(
            id=task_id,
            kind=kind,
            task_type=task_type,
            context=TaskContext(center=center, radius_m=radius,
                                admissible_classes=frozenset(tasks_config.admissible_classes)),
            questions=tuple(questions),
            payload_bytes=tasks_config.payload_bytes,
            created_at=float(created_at),
        )
        report = validate_task(task, world.taxonomy, tasks_config.emergency_max_radius_m)
        if report:
            raise InvalidConfig('生成したタスクが不正です: {v}'.format(v=report.violations))
        tasks.append(task)
    return tasks


def _random_label_set(labels: Sequence[int], rng: np.random.Generator) -> FrozenSet[int]:
    picked = frozenset(l for l in labels if rng.random() < 0.5)
    return picked or frozenset([labels[int(rng.integers(len(labels)))]])


def _simulate_labels(worker: Worker,
                     task: Task,
                     question: Question,
                     busyness: float,
                     rng: np.random.Generator) -> FrozenSet[int]:
    labels = question.candidates
    kind = worker.strategy.kind
    if kind is StrategyKind.FIXED_ANSWER_SPAMMER:
        return frozenset([labels[worker.strategy.fixed_label_index % len(labels)]])
    if kind is StrategyKind.UNIFORM_SPAMMER:
        if question.multi_label:
            return _random_label_set(labels, rng)
        return frozenset([labels[int(rng.integers(len(labels)))]])
    p = worker.reliability_for(task.task_type)
    attentive = rng.random() < 1.0 / busyness
    if not attentive:
        if question.multi_label:
            return _random_label_set(labels, rng)
        return frozenset([labels[int(rng.integers(len(labels)))]])
    if question.multi_label:
        picked = frozenset(l for l in labels if (rng.random() < p) == (l in question.ground_truth))
        return picked or frozenset([labels[int(rng.integers(len(labels)))]])
    truth = min(question.ground_truth)
    if rng.random() < p:
        return frozenset([truth])
    wrong = [l for l in labels if l != truth]
    return frozenset([wrong[int(rng.integers(len(wrong)))]])


class _Run:
    """
    シナリオ1回分の実行状態
    """

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.world = generate_world(config.world, config.seed)
        self.tasks = generate_tasks(config, self.world)
        self.rng_dispatch = rng_stream(config.seed, 'dispatch')
        self.rng_answers = rng_stream(config.seed, 'answers')
        self.histories = {w.id: ActivityHistory() for w in self.world.workers}
        self.load = {w.id: 0 for w in self.world.workers}
        self.dirty = set()  # type: set
        self.events = []  # type: List[dict]
        self.delivery_events = []  # type: List[DeliveryEvent]
        self.assignments = []  # type: List[Assignment]
        self.answers = []  # type: List[Answer]
        self.emergency = {}  # type: Dict[int, EmergencyStat]
        self.prior = config.prior_lookup() or None

    def refresh_profiles(self) -> None:
        if not self.dirty:
            return
        profiles = {}
        for worker_id in sorted(self.dirty):
            worker = self.world.worker(worker_id)
            profiles[worker_id] = build_profile(self.histories[worker_id], worker.schedule, self.world.place_classes,
                                                self.world.taxonomy.class_ids(), self.world.taxonomy.task_type_ids(),
                                                alpha=self.config.quality.alpha, prs=self.config.quality.prs)
        self.world = replace_profiles(self.world, profiles)
        self.dirty.clear()

    def candidates(self, task: Task) -> List[Worker]:
        cap = self.config.dispatch.max_questions_per_worker
        if cap is None:
            return list(self.world.workers)
        need = len(task.questions)
        return [w for w in self.world.workers if self.load[w.id] + need <= cap]

    def dispatch(self, task: Task, normal_index: int):
        dispatch_config = self.config.dispatch
        if task.kind is TaskKind.EMERGENCY:
            inside = {w.id for w in inside_geofence(task, self.world.workers)}
            if dispatch_config.emergency_mode == 'broadcast':
                return emergency_broadcast(task, self.world, self.config.network, self.rng_dispatch), inside
            mode = DispatchMode.RANKED
        else:
            inside = None
            mode = DispatchMode.RANDOM if normal_index < dispatch_config.warmup_tasks else dispatch_config.mode
        pool = self.candidates(task)
        if not pool:
            logger.warning(kv('no_capacity', task=task.id))
            return None, inside
        if mode is not DispatchMode.RANDOM:
            self.refresh_profiles()
            pool = self.candidates(task)
        result = dispatch_task(task, self.world, dispatch_config.weights, self.config.network,
                               dispatch_config.fanout, self.rng_dispatch, mode=mode, candidates=pool,
                               efficiency=self.prior)
        return result, inside

    def answer(self, task: Task, assignment: Assignment) -> Optional[Answer]:
        quality = self.config.quality
        rng = self.rng_answers
        worker = self.world.worker(assignment.worker_id)
        question = next(q for q in task.questions if q.id == assignment.question_id)
        class_id = worker.location.class_id
        busyness = self.world.busyness_of(class_id)
        notice = float(rng.exponential(quality.notice_mean_s)) if quality.notice_mean_s > 0 else 0.0
        read_at = assignment.dispatched_at + notice
        base = float(rng.lognormal(math.log(quality.response_median_s), quality.response_sigma))
        t = max(1e-3, base * worker.strategy.slowness * busyness)
        declined = question.multi_label and rng.random() >= worker.multilabel_propensity
        labels = _simulate_labels(worker, task, question, busyness, rng)
        correct = labels == question.ground_truth
        self.histories[worker.id] = record_activity(self.histories[worker.id], ActivityRecord(
            task_id=task.id, task_type=task.task_type, class_id=class_id, t=t, correct=correct and not declined,
            multi_label=question.multi_label, timestamp=assignment.dispatched_at, accepted=not declined))
        self.dirty.add(worker.id)
        if declined:
            self.events.append(OrderedDict([
                ('type', 'decline'), ('task', task.id), ('question', question.id), ('worker', worker.id),
                ('timestamp', read_at)]))
            return None
        answer = Answer(task_id=task.id, question_id=question.id, worker_id=worker.id, labels=labels,
                        read_at=read_at, sent_at=read_at + t)
        prs = personal_response_time(quality.prs, t, task.task_type)
        delta = delta_to_beta(quality.prs, t, task.task_type)
        logger.debug(kv('answer', task=task.id, question=question.id, worker=worker.id, prs=prs, delta=delta))
        self.events.append(OrderedDict([
            ('type', 'answer'), ('task', task.id), ('question', question.id), ('worker', worker.id),
            ('labels', sorted(labels)), ('read_at', answer.read_at), ('sent_at', answer.sent_at), ('t', t),
            ('prs', prs), ('delta', delta), ('correct', correct), ('location_class', class_id),
            ('task_type', task.task_type), ('timestamp', answer.sent_at)]))
        return answer

    def execute(self) -> None:
        normal_index = 0
        for task in sorted(self.tasks, key=lambda t: (t.created_at, t.id)):
            self.world = step_mobility(self.world, task.created_at)
            result, inside = self.dispatch(task, normal_index)
            if task.kind is TaskKind.NORMAL:
                normal_index += 1
            if result is None:
                continue
            for event in result.events:
                self.events.append(event.to_dict())
            self.delivery_events.extend(result.events)
            self.assignments.extend(result.assignments)
            task_answers = []
            for assignment in result.assignments:
                self.load[assignment.worker_id] += 1
                if not assignment.delivered:
                    continue
                answer = self.answer(task, assignment)
                if answer is not None:
                    task_answers.append(answer)
            self.answers.extend(task_answers)
            if inside is not None:
                reached = {a.worker_id for a in result.assignments if a.delivered and a.worker_id in inside}
                first = min((a.sent_at - task.created_at for a in task_answers), default=None)
                self.emergency[task.id] = EmergencyStat(inside=len(inside), reached=len(reached),
                                                        first_answer_s=first)
                if not inside:
                    logger.warning(kv('empty_geofence', task=task.id))
        self.dirty.update(w.id for w in self.world.workers)
        self.refresh_profiles()


def _aggregate(run: _Run) -> Tuple[Dict[str, AggregationReport], float]:
    config = run.config
    by_question = OrderedDict()  # type: Dict[int, List[Answer]]
    multi_label, candidates, truth, weights = {}, {}, {}, {}
    task_class = {}
    for task in run.tasks:
        task_class[task.id] = classify_location(task.context.center, run.world.index).id
        for q in task.questions:
            by_question[q.id] = []
            multi_label[q.id] = q.multi_label
            candidates[q.id] = q.candidates
            truth[q.id] = q.ground_truth if q.multi_label else min(q.ground_truth)
    for a in run.answers:
        by_question[a.question_id].append(a)
        weights.setdefault(a.question_id, {})[a.worker_id] = credibility_weight(
            run.world.worker(a.worker_id).profile, task_class[a.task_id], config.quality.w_min, a.worker_id)
    answered = sum(1 for answers in by_question.values() if answers)
    reports = OrderedDict()
    if answered:
        for method in config.quality.methods:
            reports[method] = aggregate_question_set(
                method, by_question, multi_label, candidates, weights=weights, threshold=config.quality.theta,
                em_max_iters=config.quality.em_max_iters, em_tol=config.quality.em_tol, truth=truth,
                record_timings=config.record_timings)
    return reports, answered / len(by_question) if by_question else 0.0


def run_scenario(config: ScenarioConfig) -> ResultSet:
    """
    シナリオを最後まで実行する

    ワールド生成 -> タスク生成 -> 到着ごとに移動 -> 割り当て (通常は順位付き、緊急は一斉配信)
    -> 回答の模擬 -> 全手法で集約 -> 指標計算。同じ設定なら結果はビット単位で再現する

    :param config: ScenarioConfig
    :return: ResultSet
    """
    config.validate()
    run = _Run(config)
    run.execute()
    aggregation, answered_fraction = _aggregate(run)

    network = None
    by_task = {}
    try:
        network = network_metrics(run.delivery_events)
        by_task = network_metrics_by_task(run.delivery_events)
    except NoEvents:
        logger.warning(kv('no_delivery_events', seed=config.seed))

    answers_by_task = OrderedDict()  # type: Dict[int, List[Answer]]
    for a in run.answers:
        answers_by_task.setdefault(a.task_id, []).append(a)
    arst = {task_id: aggregated_response_time(answers) for task_id, answers in sorted(answers_by_task.items())}

    quality = config.quality
    scores = [gamification_score(run.histories[w.id], quality.prs, quality.half_life_s, quality.w_acc,
                                 quality.w_eff, now=config.duration_s, worker_id=w.id)
              for w in run.world.workers]

    rs = ResultSet(
        config=config,
        fingerprint=config.fingerprint(),
        tasks=run.tasks,
        events=run.events,
        assignments=run.assignments,
        answers=run.answers,
        aggregation=aggregation,
        answered_fraction=answered_fraction,
        network=network,
        network_by_task=by_task,
        arst=arst,
        profiles={w.id: w.profile for w in run.world.workers},
        strategies={w.id: w.strategy.kind.value for w in run.world.workers},
        gamification=rank_gamification(scores),
        emergency=run.emergency,
    )
    geolearn = config.geolearn
    if geolearn.enabled:
        try:
            rs.efficiency_pairs = learn_locations(rs.observations(), geolearn.seeds, k=geolearn.k,
                                                  min_samples=geolearn.min_samples,
                                                  acc_threshold=geolearn.acc_threshold,
                                                  prs_threshold=geolearn.prs_threshold,
                                                  max_iters=geolearn.max_iters, tol=geolearn.tol, seed=config.seed)
        except (NoData, TooFewPoints) as e:
            logger.warning(kv('geolearn_skipped', reason=type(e).__name__))
    logger.info(kv('run_finished', seed=config.seed, tasks=len(run.tasks), answers=len(run.answers),
                   events=len(run.events)))
    return rs


def apply_axis(base: ScenarioConfig, axis: SweepAxis, value: float, repetition: int) -> ScenarioConfig:
    """
    スイープ軸の値とリピート番号 (シード = base.seed + repetition) を設定に反映する
    """
    seed = base.seed + repetition
    if axis is SweepAxis.SPAMMER_RATIO:
        world = dataclasses.replace(base.world, spammer_ratio=float(value))
        return base.replace(seed=seed, world=world)
    if axis is SweepAxis.ANSWERS_PER_QUESTION:
        return base.replace(seed=seed, dispatch=dataclasses.replace(base.dispatch, fanout=int(value)))
    per_worker = int(value)
    fanout = base.dispatch.fanout
    total = base.tasks.n_tasks * base.tasks.questions_per_task * fanout
    n_workers = max(fanout, int(math.ceil(total / per_worker)))
    per_worker = max(per_worker, base.tasks.questions_per_task)
    return base.replace(seed=seed,
                        world=dataclasses.replace(base.world, n_workers=n_workers),
                        dispatch=dataclasses.replace(base.dispatch, max_questions_per_worker=per_worker))


def sweep(spec: SweepSpec, max_workers: int = 1) -> SweepResult:
    """
    スイープ軸の値ごと・リピートごとに1回ずつ実行し、手法ごとの平均正解率をまとめる

    :param spec: SweepSpec
    :param max_workers: 並列実行するプロセス数 (1 なら逐次)
    :return: SweepResult
    """
    spec.validate()
    spec.base.validate()
    plan = [(value, rep) for value in spec.values for rep in range(spec.repetitions)]
    configs = [apply_axis(spec.base, spec.axis, value, rep) for value, rep in plan]
    if max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as executor:
            result_sets = list(executor.map(run_scenario, configs))
    else:
        result_sets = []
        for (value, rep), config in zip(plan, configs):
            logger.info(kv('sweep_run', axis=spec.axis.value, value=value, repetition=rep, seed=config.seed))
            result_sets.append(run_scenario(config))

    rows = []
    thresholds = OrderedDict((m, None) for m in spec.base.quality.methods)  # type: Dict[str, Optional[float]]
    for value in spec.values:
        runs = [rs for (v, _), rs in zip(plan, result_sets) if v == value]
        for method in spec.base.quality.methods:
            values = [rs.accuracy_of(method) for rs in runs]
            values = [v for v in values if v is not None]
            mean = float(np.mean(values)) if values else float('nan')
            std = float(np.std(values)) if values else float('nan')
            rows.append(SweepRow(axis_value=value, method=method, mean_accuracy=mean, std_accuracy=std,
                                 runs=len(values)))
            if values and mean >= spec.target_accuracy:
                if thresholds[method] is None or value < thresholds[method]:
                    thresholds[method] = value
    return SweepResult(spec=spec, result_sets=result_sets, rows=rows, thresholds=thresholds)


def write_sweep_summary(result: SweepResult, path: str) -> None:
    try:
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(SUMMARY_CSV_HEADER)
            for row in result.rows:
                writer.writerow([result.spec.axis.value, row.axis_value, row.method,
                                 '{:.6f}'.format(row.mean_accuracy), '{:.6f}'.format(row.std_accuracy), row.runs])
    except OSError as e:
        raise ExportError('スイープ結果を書き出せません: {path}'.format(path=path)) from e


def _emergency_metrics(rs: ResultSet) -> Tuple[Optional[float], float, List[str]]:
    flags = []
    stats_ = list(rs.emergency.values())
    if not stats_:
        return None, 0.0, ['no emergency tasks']
    if all(s.inside == 0 for s in stats_):
        flags.append('empty geofence')
    firsts = [s.first_answer_s for s in stats_ if s.first_answer_s is not None]
    coverage = float(np.mean([s.coverage for s in stats_]))
    return (float(np.mean(firsts)) if firsts else None), coverage, flags


def hypothesis_experiments(config: ScenarioConfig, seeds: int = 10) -> HypothesisReport:
    """
    3つの仮説をシードを揃えた比較実験で検証する

    H1: 緊急タスクの一斉配信 vs 順位付き割り当て (最初の回答までの時間, ジオフェンス内の到達率)
    H2: プロファイルによる順位付け vs 無作為割り当て (正解率, 平均 PRS)
    H3: ジオフェンス・分類による割り当て vs 地理情報なしの割り当て (正解率, 平均応答時間)

    :param config: 基準の ScenarioConfig
    :param seeds: シード数 (config.seed から連番)
    :return: HypothesisReport
    """
    config.validate()
    if seeds < 1:
        raise InvalidConfig('seeds は 1 以上にしてください')
    seed_list = [config.seed + i for i in range(seeds)]
    method = config.quality.comparison_method

    def with_mode(seed: int, mode: DispatchMode, emergency_mode: Optional[str] = None) -> ScenarioConfig:
        dispatch = dataclasses.replace(config.dispatch, mode=mode,
                                       emergency_mode=emergency_mode or config.dispatch.emergency_mode)
        return config.replace(seed=seed, dispatch=dispatch)

    h1_time = Comparison('H1', 'time_to_first_answer_s', 'broadcast', 'ranked', [], [])
    h1_cover = Comparison('H1', 'geofence_coverage', 'broadcast', 'ranked', [], [])

    def accuracy_or_flag(rs: ResultSet, comparison: Comparison, seed: int) -> float:
        value = rs.accuracy_of(method)
        if value is None:
            comparison.flags.append('no answered questions (seed {s})'.format(s=seed))
            return 0.0
        return value

    h2_acc = Comparison('H2', 'accuracy', 'profile_ranked', 'random', [], [])
    h2_prs = Comparison('H2', 'mean_prs', 'profile_ranked', 'random', [], [])
    h3_acc = Comparison('H3', 'accuracy', 'geofenced', 'blind', [], [])
    h3_time = Comparison('H3', 'mean_response_s', 'geofenced', 'blind', [], [])
    has_emergency = any(c.kind == 'emergency' and c.count > 0 for c in config.tasks.counts)

    for seed in seed_list:
        if has_emergency:
            broadcast = run_scenario(with_mode(seed, config.dispatch.mode, 'broadcast'))
            ranked = run_scenario(with_mode(seed, config.dispatch.mode, 'ranked'))
            t_b, c_b, flags_b = _emergency_metrics(broadcast)
            t_r, c_r, flags_r = _emergency_metrics(ranked)
            h1_cover.treatment_values.append(c_b)
            h1_cover.baseline_values.append(c_r)
            if t_b is not None and t_r is not None:
                h1_time.treatment_values.append(t_b)
                h1_time.baseline_values.append(t_r)
            else:
                h1_time.flags.append('no answers (seed {s})'.format(s=seed))
            for flag in flags_b + flags_r:
                if flag not in h1_cover.flags:
                    h1_cover.flags.append(flag)

        profiled = run_scenario(with_mode(seed, DispatchMode.RANKED))
        random_ = run_scenario(with_mode(seed, DispatchMode.RANDOM))
        h2_acc.treatment_values.append(accuracy_or_flag(profiled, h2_acc, seed))
        h2_acc.baseline_values.append(accuracy_or_flag(random_, h2_acc, seed))
        h2_prs.treatment_values.append(profiled.mean_prs())
        h2_prs.baseline_values.append(random_.mean_prs())

        fenced = run_scenario(with_mode(seed, DispatchMode.GEOFENCED))
        blind = run_scenario(with_mode(seed, DispatchMode.BLIND))
        h3_acc.treatment_values.append(accuracy_or_flag(fenced, h3_acc, seed))
        h3_acc.baseline_values.append(accuracy_or_flag(blind, h3_acc, seed))
        h3_time.treatment_values.append(fenced.mean_response_s())
        h3_time.baseline_values.append(blind.mean_response_s())
        logger.info(kv('hypothesis_seed', seed=seed))

    comparisons = [h2_acc, h2_prs, h3_acc, h3_time]
    if has_emergency:
        comparisons = [h1_time, h1_cover] + comparisons
    else:
        h1_cover.flags.append('no emergency tasks')
        comparisons = [h1_cover] + comparisons
    return HypothesisReport(seeds=seed_list, comparisons=comparisons, method=method)


def write_hypothesis_report(report: HypothesisReport, out_dir: str) -> Dict[str, str]:
    rows = []
    for c in report.comparisons:
        rows.append(OrderedDict([
            ('hypothesis', c.hypothesis), ('metric', c.metric), ('treatment', c.treatment),
            ('baseline', c.baseline), ('treatment_mean', c.treatment_mean), ('baseline_mean', c.baseline_mean),
            ('difference', c.difference), ('stderr', c.stderr), ('n', len(c.treatment_values)),
            ('flags', list(c.flags))]))
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(list(rows[0].keys()) if rows else ['hypothesis'])
    for row in rows:
        writer.writerow([';'.join(v) if isinstance(v, list) else
                         ('{:.6f}'.format(v) if isinstance(v, float) else v) for v in row.values()])
    files = OrderedDict([
        ('hypotheses.csv', buffer.getvalue()),
        ('hypotheses.json', json.dumps({'seeds': report.seeds, 'method': report.method, 'comparisons': rows},
                                       indent=2, sort_keys=True) + '\n'),
    ])
    return _write_files(out_dir, files)


def iterate_locations(config: ScenarioConfig, rounds: int) -> List[RoundReport]:
    """
    位置の学習を rounds 回繰り返す。各ラウンドの効率判定を次のラウンドの割り当ての事前情報に使う

    :param config: ScenarioConfig
    :param rounds: ラウンド数
    :return: ラウンドごとの RoundReport (判定の変化率 churn を含む)
    """
    if rounds < 1:
        raise InvalidConfig('rounds は 1 以上にしてください')
    reports = []
    previous = []  # type: List[EfficiencyPair]
    current = config
    for r in range(rounds):
        current = current.replace(seed=config.seed + r)
        rs = run_scenario(current)
        churn = verdict_churn(previous, rs.efficiency_pairs) if r else 0.0
        reports.append(RoundReport(round=r, seed=current.seed, pairs=rs.efficiency_pairs, churn=churn,
                                   accuracy=rs.accuracy_of('majority')))
        logger.info(kv('location_round', round=r, pairs=len(rs.efficiency_pairs), churn=churn))
        previous = rs.efficiency_pairs
        prior = {'{c}:{t}'.format(c=c, t=t): v for (c, t), v in sorted(efficiency_lookup(previous).items())}
        current = current.replace(efficiency_prior=prior)
    return reports


def _fmt(value: Optional[float]) -> str:
    return '' if value is None else '{:.6f}'.format(value)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()


def _network_row(scope: str, task: str, m: NetworkMetrics) -> list:
    return [scope, task, _fmt(m.av), _fmt(m.tu), _fmt(m.fail_r), _fmt(m.reachable_fail_r),
            m.attempted, m.delivered, m.failed, m.unreachable]


def _write_files(out_dir: str, files: Mapping[str, str]) -> Dict[str, str]:
    digests = OrderedDict()
    try:
        os.makedirs(out_dir, exist_ok=True)
        for name, text in files.items():
            data = text.encode('utf-8')
            with open(os.path.join(out_dir, name), 'wb') as f:
                f.write(data)
            digests[name] = hashlib.sha256(data).hexdigest()
    except OSError as e:
        raise ExportError('結果を書き出せません: {dir}: {e}'.format(dir=out_dir, e=e)) from e
    return digests


def export_results(rs: ResultSet, out_dir: str) -> dict:
    """
    ResultSet を書き出す。同じ ResultSet なら何度書き出してもバイト単位で同じになる

    events.jsonl, aggregation.csv, aggregation.json, questions.csv, network.csv, profiles.json,
    efficiency_pairs.csv, manifest.json (設定の指紋とファイルごとの SHA-256) を作る

    :param rs: ResultSet
    :param out_dir: 出力ディレクトリ
    :return: マニフェスト
    """
    config = rs.config
    fanout = config.dispatch.fanout if config else ''
    spammer_ratio = config.world.spammer_ratio if config else ''
    aggregation_rows = [[method, fanout, _fmt(rs.questions_per_worker()), spammer_ratio, _fmt(report.accuracy),
                         _fmt(report.compute_seconds)] for method, report in rs.aggregation.items()]

    truth = {}
    task_of = {}
    for task in rs.tasks:
        for q in task.questions:
            truth[q.id] = sorted(q.ground_truth)
            task_of[q.id] = task.id
    question_rows = []
    for method, report in rs.aggregation.items():
        for qid, estimate in report.labels.items():
            labels = sorted(estimate) if isinstance(estimate, frozenset) else [estimate]
            question_rows.append([qid, task_of.get(qid, ''), method, ' '.join(str(l) for l in labels),
                                  ' '.join(str(l) for l in truth.get(qid, [])), int(labels == truth.get(qid))])

    network_rows = []
    if rs.network is not None:
        network_rows.append(_network_row('run', '', rs.network))
    for task_id, metrics in sorted(rs.network_by_task.items()):
        network_rows.append(_network_row('task', str(task_id), metrics))

    ranks = {s.worker_id: s for s in rs.gamification}
    profiles = OrderedDict()
    for worker_id, profile in sorted(rs.profiles.items()):
        score = ranks.get(worker_id)
        profiles[str(worker_id)] = {
            'strategy': rs.strategies.get(worker_id),
            'profile': profile,
            'gamification': {'score': score.score, 'rank': score.rank} if score else None,
        }

    aggregation = OrderedDict((method, report.to_dict()) for method, report in rs.aggregation.items())

    pair_buffer = io.StringIO()
    pair_writer = csv.writer(pair_buffer, lineterminator='\n')
    pair_writer.writerow(EFFICIENCY_CSV_HEADER)
    for p in sorted(rs.efficiency_pairs, key=lambda p: (p.class_id, p.task_type)):
        pair_writer.writerow([p.class_id, p.task_type, p.verdict.value, '{:.6f}'.format(p.confidence), p.samples])

    files = OrderedDict([
        ('events.jsonl', ''.join(canonical_json(e) + '\n' for e in rs.events)),
        ('aggregation.csv', _csv_text(AGGREGATION_CSV_HEADER, aggregation_rows)),
        ('aggregation.json', json.dumps(aggregation, indent=2, sort_keys=True) + '\n'),
        ('questions.csv', _csv_text(QUESTIONS_CSV_HEADER, question_rows)),
        ('network.csv', _csv_text(NETWORK_CSV_HEADER, network_rows)),
        ('profiles.json', json.dumps(json.loads(canonical_json(profiles)), indent=2, sort_keys=True) + '\n'),
        ('efficiency_pairs.csv', pair_buffer.getvalue()),
    ])
    digests = _write_files(out_dir, files)
    manifest = OrderedDict([
        ('fingerprint', rs.fingerprint),
        ('config', config.to_dict() if config else None),
        ('files', OrderedDict((name, {'sha256': digest}) for name, digest in digests.items())),
    ])
    _write_files(out_dir, {'manifest.json': json.dumps(json.loads(canonical_json(manifest)), indent=2,
                                                        sort_keys=True) + '\n'})
    logger.info(kv('exported', out_dir=out_dir, files=len(digests) + 1))
    return manifest


def load_events(results_dir: str) -> List[dict]:
    path = os.path.join(results_dir, 'events.jsonl')
    try:
        with open(path, encoding='utf-8') as f:
            return [json.loads(line) for line in f if line.strip()]
    except OSError as e:
        raise ExportError('イベントログを読めません: {path}'.format(path=path)) from e


def load_aggregation(results_dir: str) -> Dict[str, AggregationReport]:
    """
    export_results が書き出した aggregation.json を読み戻す

    :param results_dir: 出力ディレクトリ
    :return: 手法 -> AggregationReport
    """
    path = os.path.join(results_dir, 'aggregation.json')
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise ExportError('集約結果を読めません: {path}'.format(path=path)) from e
    return OrderedDict((method, AggregationReport.from_dict(report)) for method, report in sorted(data.items()))


class Simulator:
    def __init__(self, config: Optional[ScenarioConfig] = None, settings: Optional[Settings] = None):
        if config:  # プログラムから設定
            self.config = config
        else:  # 設定ファイルから設定
            settings = settings or load_settings()
            if not settings.config_path:
                raise InvalidConfig('シナリオ設定が指定されていません (crowdsim.ini の Config)')
            self.config = ScenarioConfig.from_json(settings.config_path)
            if settings.seed is not None:
                self.config = self.config.replace(seed=settings.seed)

    def run(self) -> ResultSet:
        """
        シナリオを1回実行する

        :return: ResultSet
        """
        return run_scenario(self.config)

    def sweep(self,
              axis: str,
              values: Sequence[float],
              repetitions: int = 1,
              target_accuracy: float = 0.9,
              max_workers: int = 1) -> SweepResult:
        """
        実験軸に沿ってスイープする

        :param axis: AnswersPerQuestion / QuestionsPerWorker / SpammerRatio
        :param values: 軸の値
        :param repetitions: 値ごとのリピート数
        :param target_accuracy: 目標正解率
        :param max_workers: 並列プロセス数
        :return: SweepResult
        """
        spec = SweepSpec(axis=SweepAxis.parse(axis), values=list(values), base=self.config,
                         repetitions=repetitions, target_accuracy=target_accuracy)
        return sweep(spec, max_workers=max_workers)

    def hypotheses(self, seeds: int = 10) -> HypothesisReport:
        return hypothesis_experiments(self.config, seeds)

    def iterate_locations(self, rounds: int) -> List[RoundReport]:
        return iterate_locations(self.config, rounds)


__all__ = [
    'ResultSet', 'SweepAxis', 'SweepSpec', 'SweepResult', 'SweepRow', 'HypothesisReport',
    'Comparison', 'RoundReport', 'Simulator', 'run_scenario', 'sweep', 'hypothesis_experiments', 'export_results',
    'iterate_locations', 'majority_accuracy_closed_form', 'generate_tasks', 'write_sweep_summary',
    'write_hypothesis_report', 'write_efficiency_pairs', 'load_events',
]
