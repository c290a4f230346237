#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
#==============================================================================
#                    geodemo v1.0 - CONFIGURATION
#           Global Configuration & Constants for the Pipeline
#==============================================================================
"""

# ==============================================================================
# APPLICATION METADATA
# ==============================================================================

APP_VERSION = "1.0.0"
APP_TITLE = "geodemo - Demographics of Geographic Units from Geotagged Posts"
APP_DESCRIPTION = ("Batch pipeline that filters geotagged short-text records, "
                   "bags them per census unit and regresses demographic counts")

# ==============================================================================
# INGEST
# ==============================================================================

INGEST_CONFIG = {
    # contiguous United States, "W,E,S,N"
    'bbox': "-125.0011,-66.9326,24.9493,49.5904",
    'max_followers': 1000,
    'max_friends': 1000,
}

# ==============================================================================
# SPATIAL INDEX
# ==============================================================================

INDEX_CONFIG = {
    'node_capacity': 16,
}

# ==============================================================================
# EVALUATION
# ==============================================================================

EVAL_CONFIG = {
    'thresholds': (1, 10, 100, 1000),
    'quantile': 0.95,
}

# ==============================================================================
# SYNTHETIC DATA
# ==============================================================================

SYNTH_CONFIG = {
    'seed': 7,
    'n_units': 2000,
    'vocab_size': 500,
    'users_min': 20,
    'users_max': 80,
    'population_min': 900,
    'population_max': 1100,
    'marker_rate': 0.9,
    'filler_rate': 0.5,
    'spam_fraction': 0.02,
    'cell_size': 0.01,
    'origin': (-100.0, 35.0),
}

# ==============================================================================
# LOGGING
# ==============================================================================

LOG_CONFIG = {
    'logger_name': 'geodemo',
    'log_level': 'INFO',
    'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
}

# ==============================================================================
# EXIT CODES
# ==============================================================================

EXIT_CODES = {
    'ok': 0,
    'config': 2,
    'data': 3,
    'divergence': 4,
}

# ==============================================================================
# PIPELINE ARTIFACTS (relative to the work directory)
# ==============================================================================

ARTIFACTS = {
    'clean': "records.clean.jsonl",
    'assigned': "records.assigned.jsonl",
    'bags': "bags.jsonl",
    'split': "split.csv",
    'vocab': "vocab.tsv",
    'features': "features.npz",
    'model': "model.txt",
    'predictions': "predictions.csv",
    'report': "report.csv",
    'plot_data': "report.plot.csv",
    'manifest': "manifest.json",
}
