"""placeholder while modules land"""
