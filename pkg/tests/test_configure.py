import json
import os
import tempfile
import unittest
from unittest import mock

from pycrowdsimpy.Dispatch import DispatchMode
from pycrowdsimpy.errors import InvalidConfig
from pycrowdsimpy.GeoLearn import Verdict
from pycrowdsimpy.modules import SETTINGS_ENV, load_settings
from pycrowdsimpy.SimConfigure import ScenarioConfig
from tests import data


class Test(unittest.TestCase):
    def test_config(self):
        config = ScenarioConfig(seed=1)
        config.validate()
        self.assertEqual(config.dispatch.mode, DispatchMode.RANKED, msg='既定の割り当てモードが ranked ではない')
        self.assertEqual(config.world.n_places, 12, msg='既定の場所数が不正')
        self.assertEqual(config.quality.comparison_method, 'majority', msg='既定の比較用の集約手法が majority ではない')
        config = ScenarioConfig.from_dict({'seed': 1, 'quality': {'methods': ['em', 'majority']}})
        self.assertEqual(config.quality.comparison_method, 'em', msg='比較用の集約手法が methods の先頭ではない')

        config = ScenarioConfig.from_dict(data.small_scenario)
        self.assertEqual(config.tasks.n_tasks, 28, msg='タスク数の合計が不正')
        self.assertEqual(config.dispatch.warmup_tasks, 5, msg='プログラムからの設定に失敗')

        sample = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, 'scenario_sample.json')
        config = ScenarioConfig.from_json(sample)
        config.validate()
        self.assertEqual(len(config.geolearn.seeds), 2, msg='サンプルのシナリオ設定を読み込めない')

    def test_round_trip(self):
        seeded = data.scenario(data.small_scenario, geolearn={'seeds': [
            {'location_class': 3, 'task_type': 1, 'verdict': 'efficient'},
            {'location_class': 9, 'task_type': 1, 'verdict': 'inefficient'},
        ]}, quality={'prs': {'beta': 40.0, 'per_type_beta': {'2': 60.0}}}, efficiency_prior={'3:1': True})
        config = ScenarioConfig.from_dict(seeded)
        self.assertEqual(config.geolearn.seeds[1].verdict, Verdict.INEFFICIENT, msg='シードラベルの読み込みに失敗')
        self.assertEqual(config.quality.prs.beta_for(2), 60.0, msg='種別ごとの β の読み込みに失敗')
        self.assertEqual(config.prior_lookup(), {(3, 1): True}, msg='効率判定の事前情報の読み込みに失敗')
        again = ScenarioConfig.from_dict(json.loads(json.dumps(config.to_dict())))
        self.assertEqual(again.to_dict(), config.to_dict(), msg='辞書表現を経由すると設定が変わる')
        self.assertEqual(again.fingerprint(), config.fingerprint(), msg='辞書表現を経由すると指紋が変わる')

    def test_fingerprint(self):
        a = ScenarioConfig.from_dict(data.small_scenario)
        b = ScenarioConfig.from_dict(data.small_scenario)
        self.assertEqual(a.fingerprint(), b.fingerprint(), msg='同じ設定で指紋が変わった')
        self.assertNotEqual(a.fingerprint(), a.replace(seed=12).fingerprint(), msg='シードを変えても指紋が同じ')

    def test_invalid_config(self):
        with self.assertRaises(InvalidConfig, msg='seed の無い設定を受け付けた'):
            ScenarioConfig.from_dict({'world': {}})
        with self.assertRaises(InvalidConfig, msg='未知のキーを受け付けた'):
            ScenarioConfig.from_dict({'seed': 1, 'colour': 'red'})
        with self.assertRaises(InvalidConfig, msg='タスク設定の未知のキーを受け付けた'):
            ScenarioConfig.from_dict({'seed': 1, 'tasks': {'n': 3}})
        with self.assertRaises(InvalidConfig, msg='未知の割り当てモードを受け付けた'):
            ScenarioConfig.from_dict({'seed': 1, 'dispatch': {'mode': 'telepathy'}})
        with self.assertRaises(InvalidConfig, msg='範囲外の配信失敗率を受け付けた'):
            ScenarioConfig.from_dict({'seed': 1, 'network': {'delivery_failure_prob': 1.5}})
        with self.assertRaises(InvalidConfig, msg='未知の集約手法を受け付けた'):
            ScenarioConfig.from_dict({'seed': 1, 'quality': {'methods': ['median']}}).validate()
        with self.assertRaises(InvalidConfig, msg='methods に無い比較用の集約手法を受け付けた'):
            ScenarioConfig.from_dict({'seed': 1, 'quality': {'methods': ['em'], 'hypothesis_method': 'majority'}}).validate()
        with self.assertRaises(InvalidConfig, msg='候補ラベル 1 個を受け付けた'):
            ScenarioConfig.from_dict({'seed': 1, 'tasks': {'labels_per_question': 1}}).validate()
        with self.assertRaises(InvalidConfig, msg='上限を超える緊急タスクの半径を受け付けた'):
            ScenarioConfig.from_dict({'seed': 1, 'tasks': {'emergency_radius_m': 9000.0}}).validate()
        with self.assertRaises(InvalidConfig, msg='片方の判定しかないシードラベルを受け付けた'):
            ScenarioConfig.from_dict({'seed': 1, 'geolearn': {'seeds': [
                {'location_class': 3, 'task_type': 1, 'verdict': 'efficient'}]}}).validate()
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(InvalidConfig, msg='存在しない設定ファイルを受け付けた'):
                ScenarioConfig.from_json(os.path.join(tmp, 'missing.json'))

    def test_settings_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'crowdsim.ini')
            with open(path, 'w', encoding='utf-8') as f:
                f.write('[crowdsim]\nConfig = scenario.json\nOutDir = out\nLogLevel = INFO\nSeed = 5\n')
            settings = load_settings(path)
            self.assertEqual((settings.config_path, settings.out_dir, settings.log_level, settings.seed),
                             ('scenario.json', 'out', 'INFO', 5), msg='設定ファイルの読み込みに失敗')
            with mock.patch.dict(os.environ, {SETTINGS_ENV: path}):
                self.assertEqual(load_settings().seed, 5, msg='環境変数で指定した設定ファイルが読まれない')

            settings = load_settings(os.path.join(tmp, 'missing.ini'))
        self.assertIsNone(settings.config_path, msg='設定ファイルが無いのに Config が設定された')
        self.assertEqual(settings.out_dir, 'results', msg='設定ファイルが無いときの既定値が不正')


if __name__ == '__main__':
    unittest.main()
