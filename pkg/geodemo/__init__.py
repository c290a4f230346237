from .exceptions import (ConfigError, DataError, DivergenceError, FormatError,
                         GeoDemoError, ParseError)
from .features import FeatureConfig, Scheme, Transform
from .geomap import Resolution
from .model import TrainConfig, Variant
from .tokenizer import Tokenizer, tokenize_text

__version_info__ = {
    'major': 1,
    'minor': 0,
    'micro': 0,
    'releaselevel': 'final',
    'serial': 0,
}


def get_version(short=False):
    """ "1.0", "1.0.2" or "1.1b1"; short drops the pre-release tag. """
    info = __version_info__
    version = "%(major)i.%(minor)i" % info
    if info['micro']:
        version += ".%(micro)i" % info
    if info['releaselevel'] != 'final' and not short:
        version += "%s%i" % (info['releaselevel'][0], info['serial'])
    return version


__version__ = get_version()
