__all__ = ['ArrayMechanics', 'CoverageGrid', 'SimplexSolver', 'CorrelatedEquilibrium',
           'FeatureSchemes', 'MultiAgentLearner', 'ExperimentRunner']
