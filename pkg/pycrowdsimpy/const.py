from typing import Dict, Tuple

# 既定のロケーション分類 {SL}。実データの分類体系が無いため、代替として 12 分類を用意している
LOCATION_CLASS = {
    'open area': 0,
    'work place': 1,
    'shopping mall': 2,
    'transport': 3,
    'school': 4,
    'sport object': 5,
    'home': 6,
    'restaurant': 7,
    'park': 8,
    'hospital': 9,
    'university': 10,
    'entertainment': 11,
}

DEFAULT_CLASS_ID = LOCATION_CLASS['open area']

# ロケーションのバリアント {SLV}: 名前 -> (ID, 親の分類ID)
LOCATION_VARIANT = {
    'hall': (1, LOCATION_CLASS['sport object']),
    'amusement park': (2, LOCATION_CLASS['sport object']),
    'public soccer field': (3, LOCATION_CLASS['sport object']),
    'train': (4, LOCATION_CLASS['transport']),
    'bus stop': (5, LOCATION_CLASS['transport']),
    'railway station': (6, LOCATION_CLASS['transport']),
    'primary school': (7, LOCATION_CLASS['school']),
    'high school': (8, LOCATION_CLASS['school']),
    'office': (9, LOCATION_CLASS['work place']),
    'factory': (10, LOCATION_CLASS['work place']),
    'lecture room': (11, LOCATION_CLASS['university']),
    'library': (12, LOCATION_CLASS['university']),
    'cinema': (13, LOCATION_CLASS['entertainment']),
}

TASK_TYPE = {
    'translation': 1,
    'image description': 2,
    'census': 3,
    'crisis mapping': 4,
    'citizen science': 5,
}

# 分類ごとの「忙しさ」。応答時間の倍率であり、1/b の確率でしか集中して回答しない
BUSYNESS = {
    LOCATION_CLASS['open area']: 1.5,
    LOCATION_CLASS['work place']: 2.5,
    LOCATION_CLASS['shopping mall']: 1.8,
    LOCATION_CLASS['transport']: 1.0,
    LOCATION_CLASS['school']: 2.0,
    LOCATION_CLASS['sport object']: 1.6,
    LOCATION_CLASS['home']: 1.1,
    LOCATION_CLASS['restaurant']: 1.7,
    LOCATION_CLASS['park']: 1.2,
    LOCATION_CLASS['hospital']: 3.0,
    LOCATION_CLASS['university']: 2.8,
    LOCATION_CLASS['entertainment']: 2.2,
}  # type: Dict[int, float]

EARTH_RADIUS_M = 6371000.0
DAY_SECONDS = 86400.0

EMERGENCY_MAX_RADIUS_M = 5000.0
MAX_SPAMMER_RATIO = 0.4
LAPLACE_ALPHA = 1.0
EM_DIAGONAL_ALPHA = 4.0
CREDIBILITY_W_MIN = 0.1
PRS_T_MIN = 1.0
PRS_BETA = 30.0
MIN_SAMPLES = 20
DEFAULT_N_PLACES = 12

SWEEP_AXIS = {
    'answers_per_question': 'AnswersPerQuestion',
    'questions_per_worker': 'QuestionsPerWorker',
    'spammer_ratio': 'SpammerRatio',
}

AGGREGATION_METHODS = ('majority', 'weighted', 'em')  # type: Tuple[str, ...]
