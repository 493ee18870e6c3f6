import json
import math
import os
import tempfile
import unittest

import numpy as np

from pycrowdsimpy import const
from pycrowdsimpy.Domain import (GeoPoint, LocationIndex, Place, Question, Taxonomy, TaskKind, classify_location,
                                 haversine_distance, load_location_index, load_taxonomy, place_from_dict,
                                 validate_task)
from pycrowdsimpy.errors import InvalidGeoPoint, InvalidTaxonomy
from tests import data
from tests.utils import make_task


def _random_point(rng: np.random.Generator) -> GeoPoint:
    return GeoPoint(float(rng.uniform(-89.0, 89.0)), float(rng.uniform(-179.9, 179.9)))


class Test(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.taxonomy = Taxonomy.default()

    def test_geo_point(self):
        self.assertEqual(GeoPoint(0, 180).lon, -180.0, msg='経度 180 が -180 に正規化されていない')
        with self.assertRaises(InvalidGeoPoint, msg='範囲外の緯度を受け付けた'):
            GeoPoint(91.0, 0.0)
        with self.assertRaises(InvalidGeoPoint, msg='範囲外の経度を受け付けた'):
            GeoPoint(0.0, -180.5)
        with self.assertRaises(InvalidGeoPoint, msg='NaN を受け付けた'):
            GeoPoint(float('nan'), 0.0)
        with self.assertRaises(ValueError, msg='InvalidGeoPoint が ValueError ではない'):
            GeoPoint(-91.0, 0.0)

    def test_haversine_distance(self):
        p = GeoPoint(10, 20)
        self.assertEqual(haversine_distance(p, p), 0.0, msg='同じ点の距離が 0 ではない')
        half = haversine_distance(GeoPoint(0, 0), GeoPoint(0, 180))
        self.assertAlmostEqual(half, math.pi * const.EARTH_RADIUS_M, delta=1.0, msg='半周の距離が不正')
        d = haversine_distance(GeoPoint(*data.WARSAW), GeoPoint(*data.POZNAN))
        self.assertAlmostEqual(d, data.WARSAW_POZNAN_M, delta=data.WARSAW_POZNAN_M * 0.001,
                               msg='ワルシャワ-ポズナン間の距離が不正')

    def test_haversine_properties(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a, b, c = _random_point(rng), _random_point(rng), _random_point(rng)
            ab, ba = haversine_distance(a, b), haversine_distance(b, a)
            self.assertAlmostEqual(ab, ba, places=6, msg='距離が対称ではない')
            self.assertGreaterEqual(ab, 0.0, msg='距離が負')
            bound = haversine_distance(a, c) + haversine_distance(c, b)
            self.assertLessEqual(ab, bound * (1 + 1e-6) + 1e-6, msg='三角不等式が成り立たない')

    def test_taxonomy(self):
        self.assertEqual(len(self.taxonomy.classes), 12, msg='既定の分類数が 12 ではない')
        self.assertEqual(self.taxonomy.default_class.name, 'open area', msg='既定の分類が open area ではない')
        self.assertEqual(self.taxonomy.variants[4].parent, const.LOCATION_CLASS['transport'],
                         msg='train の親分類が transport ではない')
        loaded = Taxonomy.from_dict(data.basic_taxonomy)
        self.assertEqual(loaded.to_dict(), data.basic_taxonomy, msg='分類体系の JSON 表現が一致しない')
        broken = dict(data.basic_taxonomy, variants=[{'id': 9, 'parent': 42, 'name': 'ghost'}])
        with self.assertRaises(InvalidTaxonomy, msg='存在しない親分類を受け付けた'):
            Taxonomy.from_dict(broken)
        duplicated = dict(data.basic_taxonomy, classes=data.basic_taxonomy['classes'] * 2)
        with self.assertRaises(InvalidTaxonomy, msg='重複した分類IDを受け付けた'):
            Taxonomy.from_dict(duplicated)

    def test_load_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            taxonomy_path = os.path.join(tmp, 'taxonomy.json')
            with open(taxonomy_path, 'w', encoding='utf-8') as f:
                json.dump(data.basic_taxonomy, f)
            places_path = os.path.join(tmp, 'places.json')
            with open(places_path, 'w', encoding='utf-8') as f:
                json.dump({'places': data.basic_places}, f)
            taxonomy = load_taxonomy(taxonomy_path)
            self.assertEqual(taxonomy.task_type_ids(), [1, 2], msg='分類体系の読み込みに失敗')
            index = load_location_index(places_path)
            self.assertEqual(len(index), 3, msg='場所の読み込みに失敗')
            self.assertEqual(index.place(2).variant_id, 4, msg='バリアントの読み込みに失敗')
            with self.assertRaises(InvalidTaxonomy, msg='分類体系に無い分類の場所を受け付けた'):
                load_location_index(places_path, taxonomy)

    def test_validate_task(self):
        report = validate_task(make_task(), self.taxonomy)
        self.assertTrue(report.ok, msg='妥当なタスクに違反が報告された: {r}'.format(r=report))

        task = make_task(candidates=(0,))
        self.assertIn('too few labels', validate_task(task, self.taxonomy), msg='候補ラベル不足を検出できない')

        task = make_task(kind=TaskKind.EMERGENCY, radius_m=float('inf'))
        self.assertIn('emergency radius', validate_task(task, self.taxonomy), msg='無限半径の緊急タスクを検出できない')

        task = make_task(radius_m=0.0, task_type=99, admissible=[77])
        report = validate_task(task, self.taxonomy)
        self.assertIn('radius must be positive', report, msg='半径 0 を検出できない')
        self.assertIn('unknown task type', report, msg='未知の種別を検出できない')
        self.assertIn('unknown location class', report, msg='未知の分類を検出できない')

        q = Question(id=1, candidates=(0, 1), ground_truth=frozenset([5]))
        task = make_task()
        task = type(task)(id=task.id, kind=task.kind, task_type=task.task_type, context=task.context,
                          questions=(q,), payload_bytes=0)
        self.assertIn('ground truth', validate_task(task, self.taxonomy), msg='候補外の正解を検出できない')

    def test_classify_location(self):
        index = LocationIndex(self.taxonomy, [place_from_dict(p) for p in data.basic_places])
        school = data.school_place
        self.assertEqual(classify_location(GeoPoint(school['lat'], school['lon']), index).name, 'school',
                         msg='school の中心が school に分類されない')
        self.assertEqual(classify_location(GeoPoint(0.0, 0.0), index).name, 'open area',
                         msg='どこにも含まれない点が open area にならない')

        tie = LocationIndex(self.taxonomy, [
            Place(id=5, point=GeoPoint(0.0, -0.001), class_id=const.LOCATION_CLASS['school'], radius_m=500.0),
            Place(id=2, point=GeoPoint(0.0, 0.001), class_id=const.LOCATION_CLASS['transport'], radius_m=500.0),
        ])
        self.assertEqual(classify_location(GeoPoint(0.0, 0.0), tie).name, 'transport',
                         msg='等距離のとき ID の小さい場所が選ばれない')

    def test_classify_location_matches_linear_scan(self):
        rng = np.random.default_rng(3)
        places = [Place(id=i, point=GeoPoint(float(rng.uniform(52.1, 52.3)), float(rng.uniform(20.9, 21.1))),
                        class_id=int(rng.integers(1, 12)), radius_m=float(rng.uniform(500, 3000)))
                  for i in range(40)]
        index = LocationIndex(self.taxonomy, places)
        for _ in range(300):
            p = GeoPoint(float(rng.uniform(52.05, 52.35)), float(rng.uniform(20.85, 21.15)))
            best = None
            for place in sorted(places, key=lambda x: x.id):
                d = haversine_distance(p, place.point)
                if d <= place.radius_m and (best is None or d < best[0]):
                    best = (d, place.class_id)
            expected = best[1] if best else const.DEFAULT_CLASS_ID
            self.assertEqual(classify_location(p, index).id, expected, msg='線形走査と分類が一致しない')


if __name__ == '__main__':
    unittest.main()
