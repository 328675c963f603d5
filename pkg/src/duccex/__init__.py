"""Excited-state DUCC downfolding and statistical QPE sampling."""
