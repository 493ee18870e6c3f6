from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from pycrowdsimpy.Domain import GeoPoint, Question, Task, TaskContext, TaskKind, WorkerLocation
from pycrowdsimpy.Quality import Answer
from pycrowdsimpy.SimConfigure import ScenarioConfig
from pycrowdsimpy.World import MobilitySchedule, Strategy, Worker, WorkerProfile


def make_profile(skill: Optional[Dict[int, float]] = None,
                 class_affinity: Optional[Dict[int, float]] = None) -> WorkerProfile:
    return WorkerProfile(
        skill=skill or {},
        mean_prs={},
        class_affinity=class_affinity or {},
        multilabel_willingness=0.5,
        sample_counts={},
    )


def make_worker(worker_id: int,
                lat: float = 52.2297,
                lon: float = 21.0122,
                class_id: int = 0,
                skill: Optional[Dict[int, float]] = None,
                reliability: float = 0.8) -> Worker:
    return Worker(
        id=worker_id,
        location=WorkerLocation(point=GeoPoint(lat, lon), class_id=class_id),
        schedule=MobilitySchedule(segments=((0.0, 0),)),
        reliability=reliability,
        strategy=Strategy(),
        profile=make_profile(skill=skill),
    )


def make_task(task_id: int = 0,
              lat: float = 52.2297,
              lon: float = 21.0122,
              radius_m: float = 1000.0,
              kind: TaskKind = TaskKind.NORMAL,
              task_type: int = 1,
              admissible: Iterable[int] = (),
              n_questions: int = 1,
              candidates: Sequence[int] = (0, 1),
              payload_bytes: int = 100) -> Task:
    questions = tuple(Question(id=task_id * 100 + j, candidates=tuple(candidates),
                               ground_truth=frozenset([candidates[0]])) for j in range(n_questions))
    return Task(
        id=task_id,
        kind=kind,
        task_type=task_type,
        context=TaskContext(center=GeoPoint(lat, lon), radius_m=radius_m, admissible_classes=frozenset(admissible)),
        questions=questions,
        payload_bytes=payload_bytes,
    )


def make_answer(question_id: int,
                worker_id: int,
                labels,
                seconds: float = 5.0,
                task_id: int = 0) -> Answer:
    """
    回答を作る。labels は int またはラベルの集合
    """
    if isinstance(labels, int):
        labels = [labels]
    return Answer(task_id=task_id, question_id=question_id, worker_id=worker_id, labels=frozenset(labels),
                  read_at=0.0, sent_at=seconds)


def simulate_answers(truth: Dict[int, int],
                     reliabilities: Sequence[float],
                     rng: np.random.Generator,
                     n_labels: int = 2,
                     spammers: int = 0) -> List[Answer]:
    """
    すべての問題にすべてのワーカーが回答する回答行列を作る。
    信頼度 p のワーカーは確率 p で正解し、それ以外は他のラベルを一様に選ぶ。スパマーは一様に選ぶ

    :param truth: 問題ID -> 正解ラベル
    :param reliabilities: 正直なワーカーの信頼度
    :param rng: 乱数
    :param n_labels: ラベル数
    :param spammers: スパマーの人数 (ワーカーIDは正直なワーカーの後ろ)
    :return: 回答のリスト
    """
    answers = []
    for qid in sorted(truth):
        for worker_id, p in enumerate(reliabilities):
            if rng.random() < p:
                label = truth[qid]
            else:
                wrong = [l for l in range(n_labels) if l != truth[qid]]
                label = wrong[int(rng.integers(len(wrong)))]
            answers.append(make_answer(qid, worker_id, label))
        for s in range(spammers):
            answers.append(make_answer(qid, len(reliabilities) + s, int(rng.integers(n_labels))))
    return answers


def group_by_question(answers: Iterable[Answer]) -> Dict[int, List[Answer]]:
    grouped = {}  # type: Dict[int, List[Answer]]
    for a in answers:
        grouped.setdefault(a.question_id, []).append(a)
    return grouped


def load_scenario(data: dict) -> ScenarioConfig:
    return ScenarioConfig.from_dict(data)
