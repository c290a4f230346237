"""
Census reference tables: category orders, national shares and the
default denominator category of each demographic variable.
"""

CATEGORIES = {
    "gender": ("male", "female"),
    "race": ("white", "black", "asian", "hispanic", "other"),
}

# 2015 national estimates, same order as CATEGORIES
NATIONAL_SHARES = {
    "gender": (0.492, 0.508),
    "race": (0.616, 0.124, 0.054, 0.176, 0.030),
}

DENOMINATOR = {
    "gender": "female",
    "race": "white",
}


def categories_for(variable, observed=()):
    """ Known variables keep their census order; anything else is sorted. """
    if variable in CATEGORIES:
        return CATEGORIES[variable]
    return tuple(sorted(set(observed)))


def denominator_index(variable, categories):
    name = DENOMINATOR.get(variable)
    if name is not None and name in categories:
        return list(categories).index(name)
    return 0
