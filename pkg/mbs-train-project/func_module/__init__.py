__all__ = [
    "autograd_func",
    "config_func",
    "data_func",
    "errors_func",
    "experiment_func",
    "helper_func",
    "loss_func",
    "mbs_func",
    "memory_func",
    "optim_func",
    "plot_func",
    "report_func",
    "stream_func"
]
