# Core modules for dataset-inference fingerprinting experiments
