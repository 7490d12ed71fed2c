# Utils module for dataset-inference experiments
