#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
geodemo v1.0 - Application Modules Package
"""

__all__ = [
    'utilities',
    'report_export',
    'pipeline',
    'synthetic',
]
