'''
   virtual-time schedule of one mini-batch streamed to the device:
   transfer, forward and backward per micro-batch, then one update

   two resources: the transfer channel and the compute unit;
   with overlap the next micro-batch is transferred while the current
   one computes (two buffer slots), compute stays in plan order

   access these values in other modules by
        import func_module.stream_func as sf
'''

from dataclasses import dataclass, field

import polars as pl

EVENT_KINDS = ('transfer', 'forward', 'backward', 'update')
# buffer slots on the device: one being computed, one being filled
BUFFER_SLOTS = 2


@dataclass(frozen= True)
class CostModel:
    transfer_seconds_per_byte: float = 1e-9
    compute_seconds_per_sample_forward: float = 1e-4
    compute_seconds_per_sample_backward: float = 2e-4
    update_seconds: float = 1e-3
    # fixed cost of starting one transfer / one forward or backward
    transfer_latency_seconds: float = 0.0
    compute_launch_seconds: float = 0.0

    def __post_init__(self):
        if min(self.transfer_seconds_per_byte,
               self.compute_seconds_per_sample_forward,
               self.compute_seconds_per_sample_backward,
               self.update_seconds,
               self.transfer_latency_seconds,
               self.compute_launch_seconds) < 0:
            raise ValueError('cost model entries must be non-negative')

    def transfer(self, n_bytes):
        return self.transfer_latency_seconds \
            + self.transfer_seconds_per_byte * n_bytes

    def forward(self, n_samples):
        return self.compute_launch_seconds \
            + self.compute_seconds_per_sample_forward * n_samples

    def backward(self, n_samples):
        return self.compute_launch_seconds \
            + self.compute_seconds_per_sample_backward * n_samples


@dataclass(frozen= True)
class StreamEvent:
    kind: str
    index: int
    start: float
    end: float


@dataclass
class StreamSchedule:
    events: list = field(default_factory= list)
    makespan: float = 0.0
    overlap_enabled: bool = False

    def to_frame(self):
        return pl.DataFrame(
            {'event': list(range(len(self.events))),
             'kind': [event.kind for event in self.events],
             'index': [event.index for event in self.events],
             'start': [event.start for event in self.events],
             'end': [event.end for event in self.events]},
            schema= {'event': pl.Int64, 'kind': pl.String,
                     'index': pl.Int64, 'start': pl.Float64,
                     'end': pl.Float64})


def simulate_stream(plan, cost, bytes_per_sample, overlap= False):
    '''
        no overlap: transfer_k, forward_k, backward_k back to back
        overlap: transfer_k starts when transfer_{k-1} is done and a
        buffer slot is free (compute of k-2 finished)
        the update follows the last backward
    '''
    events = []
    transfer_ends = []
    compute_ends = []
    clock = 0.0
    for k, size in enumerate(plan.sizes):
        if overlap:
            start = transfer_ends[-1] if transfer_ends else 0.0
            if k >= BUFFER_SLOTS:
                start = max(start, compute_ends[k - BUFFER_SLOTS])
        else:
            start = clock
        transfer_end = start + cost.transfer(size * bytes_per_sample)
        events.append(StreamEvent('transfer', k, start, transfer_end))

        compute_start = transfer_end
        if compute_ends:
            compute_start = max(compute_start, compute_ends[-1])
        forward_end = compute_start + cost.forward(size)
        backward_end = forward_end + cost.backward(size)
        events.append(StreamEvent('forward', k, compute_start, forward_end))
        events.append(StreamEvent('backward', k, forward_end, backward_end))
        transfer_ends.append(transfer_end)
        compute_ends.append(backward_end)
        clock = backward_end

    update_start = compute_ends[-1] if compute_ends else 0.0
    update_end = update_start + cost.update_seconds
    events.append(StreamEvent('update', plan.n_s_mu, update_start, update_end))
    return StreamSchedule(events= events, makespan= update_end,
                          overlap_enabled= overlap)


def validate_schedule(schedule):
    '''
        list of violated structural rules, empty when sound
    '''
    problems = []
    by_resource = {'channel': [], 'compute': []}
    transfer_end = {}
    last_backward = 0.0
    for event in schedule.events:
        if event.end < event.start:
            problems.append(f'{event.kind} {event.index} ends before start')
        if event.kind == 'transfer':
            by_resource['channel'].append(event)
            transfer_end[event.index] = event.end
        elif event.kind in ('forward', 'backward'):
            by_resource['compute'].append(event)
            if event.start < transfer_end.get(event.index, float('inf')):
                problems.append(
                    f'{event.kind} {event.index} starts before its transfer')
            if event.kind == 'backward':
                last_backward = max(last_backward, event.end)
    for resource, items in by_resource.items():
        items = sorted(items, key= lambda event: event.start)
        for first, second in zip(items, items[1:]):
            if second.start < first.end:
                problems.append(f'{resource} events overlap at '
                                f'{first.kind} {first.index}')
    final = schedule.events[-1] if schedule.events else None
    if final is None or final.kind != 'update' \
            or final.start < last_backward:
        problems.append('update is not the last event')
    return problems


@dataclass
class OverheadReport:
    mbs_makespan: float
    baseline_makespan: float | None
    overhead_seconds: float | None
    overhead_percent: float | None
    # 'ok' or 'Failed'
    baseline_status: str


def overhead_report(mbs_schedule, baseline_schedule, baseline_fits= True):
    '''
        MBS makespan against one transfer + one forward + one backward
        of the whole mini-batch; a baseline that does not fit the
        device is 'Failed' and its overhead undefined
    '''
    if not baseline_fits or baseline_schedule is None:
        return OverheadReport(mbs_schedule.makespan, None, None, None,
                              'Failed')
    extra = mbs_schedule.makespan - baseline_schedule.makespan
    percent = 100.0 * extra / baseline_schedule.makespan \
        if baseline_schedule.makespan > 0 else 0.0
    return OverheadReport(mbs_schedule.makespan, baseline_schedule.makespan,
                          extra, percent, 'ok')
