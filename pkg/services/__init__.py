"""
Signal processing services: STFT, ERB features, two-stage enhancement, oracle
experiments, training-set synthesis, losses and evaluation
"""
