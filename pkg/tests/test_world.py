import dataclasses
import math
import unittest

import numpy as np

from pycrowdsimpy import const
from pycrowdsimpy.Domain import Place, GeoPoint
from pycrowdsimpy.errors import ClockRegression, EmptyWorld, InvalidConfig, OutOfOrder
from pycrowdsimpy.World import (ActivityHistory, ActivityRecord, MobilitySchedule, StrategyKind, WorldConfig,
                                build_profile, generate_world, record_activity, spammer_count, step_mobility)

SCHOOL = const.LOCATION_CLASS['school']
TRANSPORT = const.LOCATION_CLASS['transport']
TRANSLATION = const.TASK_TYPE['translation']


def _record(timestamp: float, correct: bool = True, task_type: int = TRANSLATION, multi_label: bool = False,
            accepted: bool = True) -> ActivityRecord:
    return ActivityRecord(task_id=0, task_type=task_type, class_id=SCHOOL, t=10.0, correct=correct,
                          multi_label=multi_label, timestamp=timestamp, accepted=accepted)


class Test(unittest.TestCase):
    def test_generate_world_spammers(self):
        world = generate_world(WorldConfig(n_workers=100, n_places=10, spammer_ratio=0.4), seed=1)
        spammers = [w for w in world.workers if w.strategy.is_spammer]
        self.assertEqual(len(spammers), 40, msg='スパマーの人数が 40 人ではない')

        world = generate_world(WorldConfig(n_workers=100, n_places=10), seed=1)
        self.assertTrue(all(w.strategy.kind is StrategyKind.HONEST for w in world.workers),
                        msg='spammer_ratio 0 でスパマーがいる')

        config = WorldConfig(n_workers=20, n_places=5, spammer_ratio=0.4, strategy_mix={'uniform': 1, 'fixed': 1})
        kinds = [w.strategy.kind for w in generate_world(config, seed=2).workers]
        self.assertEqual(kinds.count(StrategyKind.UNIFORM_SPAMMER), 4, msg='スパマーの戦略の配分が不正')
        self.assertEqual(kinds.count(StrategyKind.FIXED_ANSWER_SPAMMER), 4, msg='スパマーの戦略の配分が不正')

    def test_spammer_count_property(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            n = int(rng.integers(1, 10001))
            ratio = float(rng.uniform(0, 1))
            count = spammer_count(ratio, n)
            self.assertLessEqual(abs(count - ratio * n), 0.5 + 1e-9, msg='スパマー数が四捨五入になっていない')

    def test_generate_world_errors(self):
        with self.assertRaises(EmptyWorld, msg='ワーカー 0 人を受け付けた'):
            generate_world(WorldConfig(n_workers=0, n_places=3), seed=1)
        with self.assertRaises(EmptyWorld, msg='場所 0 件を受け付けた'):
            generate_world(WorldConfig(n_workers=3, n_places=0), seed=1)
        with self.assertRaises(InvalidConfig, msg='上限を超えるスパマー比率を受け付けた'):
            generate_world(WorldConfig(n_workers=3, n_places=3, spammer_ratio=0.5), seed=1)
        world = generate_world(WorldConfig(n_workers=10, n_places=3, spammer_ratio=0.5, max_spammer_ratio=1.0),
                               seed=1)
        self.assertEqual(sum(1 for w in world.workers if w.strategy.is_spammer), 5, msg='上限の上書きが効かない')

    def test_generate_world_deterministic(self):
        config = WorldConfig(n_workers=30, n_places=8, spammer_ratio=0.2, sloth_ratio=0.2)
        self.assertEqual(generate_world(config, seed=9).workers, generate_world(config, seed=9).workers,
                         msg='同じシードで異なる World が生成された')
        self.assertNotEqual(generate_world(config, seed=9).workers, generate_world(config, seed=10).workers,
                            msg='異なるシードで同じ World が生成された')

    def test_step_mobility(self):
        places = [
            Place(id=0, point=GeoPoint(52.20, 21.00), class_id=SCHOOL, radius_m=100.0),
            Place(id=1, point=GeoPoint(52.25, 21.05), class_id=TRANSPORT, radius_m=100.0, variant_id=4),
        ]
        world = generate_world(WorldConfig(n_workers=1, places=places), seed=1)
        schedule = MobilitySchedule(segments=((0.0, 0), (3600.0, 1), (7200.0, 0)))
        worker = dataclasses.replace(world.workers[0], schedule=schedule)
        world = dataclasses.replace(world, workers=(worker,))

        self.assertIs(step_mobility(world, 0.0), world, msg='同じ時刻への移動で World が変わった')
        moved = step_mobility(world, 4000.0)
        self.assertEqual(moved.workers[0].location.class_id, TRANSPORT, msg='移動先の分類が transport ではない')
        later = step_mobility(moved, const.DAY_SECONDS + 4000.0)
        self.assertEqual(later.workers[0].location.class_id, TRANSPORT, msg='翌日に予定が繰り返されない')
        with self.assertRaises(ClockRegression, msg='時刻の巻き戻しを受け付けた'):
            step_mobility(moved, 100.0)

    def test_step_mobility_matches_segment_scan(self):
        world = generate_world(WorldConfig(n_workers=25, n_places=6), seed=4)
        end = const.DAY_SECONDS - 1.0
        moved = step_mobility(world, end)
        for w in moved.workers:
            place_id = None
            for start, pid in w.schedule.segments:
                if start <= end:
                    place_id = pid
            self.assertEqual(w.location.point, world.index.place(place_id).point, msg='最後の区間の場所にいない')
            self.assertEqual(w.location.class_id, world.place_classes[place_id], msg='分類が付け直されていない')

    def test_record_activity(self):
        history = record_activity(ActivityHistory(), _record(10.0))
        self.assertEqual(len(history), 1, msg='空の履歴への追加に失敗')
        history = record_activity(history, _record(20.0))
        self.assertEqual([r.timestamp for r in history.records], [10.0, 20.0], msg='追加の順序が保たれない')
        with self.assertRaises(OutOfOrder, msg='古い時刻の記録を受け付けた'):
            record_activity(history, _record(5.0))

    def test_build_profile(self):
        school_day = MobilitySchedule(segments=((0.0, 0),))
        place_classes = {0: SCHOOL}
        class_ids = sorted(const.LOCATION_CLASS.values())
        task_types = sorted(const.TASK_TYPE.values())

        empty = build_profile(ActivityHistory(), school_day, place_classes, class_ids, task_types, alpha=1.0)
        self.assertTrue(all(v == 0.5 for v in empty.skill.values()), msg='空履歴の skill が 0.5 ではない')
        self.assertEqual(empty.class_affinity[SCHOOL], 1.0, msg='school に終日いるのに affinity が 1 ではない')

        history = ActivityHistory()
        for i in range(10):
            history = record_activity(history, _record(float(i), correct=i != 0))
        profile = build_profile(history, school_day, place_classes, class_ids, task_types, alpha=1.0)
        self.assertAlmostEqual(profile.skill[TRANSLATION], 10 / 12, places=12, msg='平滑化した skill が不正')
        self.assertEqual(profile.sample_counts[TRANSLATION], 10, msg='回答数が不正')

        history = ActivityHistory()
        history = record_activity(history, _record(1.0, multi_label=True, accepted=False))
        history = record_activity(history, _record(2.0, multi_label=True))
        profile = build_profile(history, school_day, place_classes, class_ids, task_types, alpha=1.0)
        self.assertAlmostEqual(profile.multilabel_willingness, 0.5, msg='複数ラベルの受諾率が不正')
        self.assertEqual(profile.sample_counts[TRANSLATION], 1, msg='辞退した問題が回答数に含まれている')

    def test_profile_properties(self):
        world = generate_world(WorldConfig(n_workers=40, n_places=9), seed=8)
        rng = np.random.default_rng(8)
        for w in world.workers:
            affinity = math.fsum(w.profile.class_affinity.values())
            self.assertAlmostEqual(affinity, 1.0, delta=1e-9, msg='class_affinity の合計が 1 ではない')
            history = ActivityHistory()
            for i in range(int(rng.integers(0, 30))):
                history = record_activity(history, _record(float(i), correct=bool(rng.random() < 0.9)))
            profile = build_profile(history, w.schedule, world.place_classes, world.taxonomy.class_ids(),
                                    world.taxonomy.task_type_ids(), alpha=1.0)
            for skill in profile.skill.values():
                self.assertTrue(0.0 < skill < 1.0, msg='skill が開区間 (0, 1) に収まらない')

    def test_world_config_round_trip(self):
        config = WorldConfig(n_workers=5, n_places=2, busyness={3: 1.5}, sloth_multiplier=(2.0, 4.0))
        self.assertEqual(WorldConfig.from_dict(config.to_dict()), config, msg='WorldConfig の辞書表現が一致しない')
        with self.assertRaises(InvalidConfig, msg='未知のキーを受け付けた'):
            WorldConfig.from_dict({'n_workers': 3, 'colour': 'red'})


if __name__ == '__main__':
    unittest.main()
