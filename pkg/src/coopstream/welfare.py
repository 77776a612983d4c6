"""QoE, energy, and welfare accounting over download / receive sequences.

Welfare of a user = playback value - quality-degradation loss - rebuffering
loss - cellular energy - local-exchange energy.  Social welfare is the sum
over users.  All terms are computed from emitted sequences only, so any
scheduler's output can be scored after the fact.
"""

from __future__ import annotations

import math

from .model import (
    DownloadSequence,
    ModelError,
    ReceiveSequence,
    UserProfile,
    WelfareBreakdown,
    derive_receive_sequences,
    segment_volume,
)

# (owner_seq_no, stall seconds) pairs; one entry per stalled segment.
RebufferLog = list[tuple[int, float]]


def quality_value(theta: float, bitrate: float) -> float:
    """Per-second playback value of watching at `bitrate`: log(1 + theta * r)."""
    return math.log(1.0 + theta * bitrate)


def total_value(rx: ReceiveSequence, profile: UserProfile) -> float:
    """Playback value accrued over every received segment."""
    return sum(quality_value(profile.theta, r) * profile.segment_len for r in rx.bitrates)


def qdeg_loss(rx: ReceiveSequence, profile: UserProfile) -> float:
    """Penalty for downward bitrate switches between consecutive segments."""
    loss = 0.0
    rates = rx.bitrates
    for prev, cur in zip(rates, rates[1:]):
        loss += profile.phi_qdeg * max(prev - cur, 0.0)
    return loss


def buffer_trajectory(rx: ReceiveSequence, profile: UserProfile) -> list[float]:
    """Playback buffer level (seconds) right after each receipt.

    The buffer drains at one second per second from the first receipt on
    and gains segment_len per receipt; never negative between receipts.
    """
    levels: list[float] = []
    q = 0.0
    times = rx.receive_times
    for k, t in enumerate(times):
        if k > 0:
            q = max(q - (t - times[k - 1]), 0.0)
        q += profile.segment_len
        levels.append(q)
    return levels


def rebuf_loss(rx: ReceiveSequence, profile: UserProfile) -> tuple[float, RebufferLog]:
    """Rebuffering penalty plus a per-segment log of stall durations.

    Segment k stalls for the part of the inter-receipt gap that the buffer
    could not cover; the first segment never charges (startup is free).
    """
    log: RebufferLog = []
    total = 0.0
    q = 0.0
    times = rx.receive_times
    for k, t in enumerate(times):
        if k > 0:
            gap = t - times[k - 1]
            stall = max(gap - q, 0.0)
            if stall > 0.0:
                log.append((k + 1, stall))
                total += profile.phi_rebuf * stall
            q = max(q - gap, 0.0)
        q += profile.segment_len
    return total, log


def energy_cell(dl: DownloadSequence, profile: UserProfile, profiles: dict[int, UserProfile]) -> float:
    """Cellular energy spent by the downloader: radio time plus data volume."""
    total = 0.0
    for rec in dl.records:
        total += profile.c_time * rec.duration
        total += profile.c_data * rec.volume(profiles[rec.owner])
    return total


def energy_wifi(dl: DownloadSequence, profile: UserProfile, profiles: dict[int, UserProfile]) -> float:
    """Local-exchange energy for relayed segments; transfer time costs nothing."""
    total = 0.0
    for rec in dl.records:
        if rec.owner != rec.downloader:
            total += profile.w_data * rec.volume(profiles[rec.owner])
    return total


def user_welfare(
    dl: DownloadSequence | None,
    rx: ReceiveSequence | None,
    profile: UserProfile,
    profiles: dict[int, UserProfile],
) -> WelfareBreakdown:
    """Full welfare breakdown for one user from its two sequences."""
    value = loss_q = loss_r = e_cell = e_wifi = 0.0
    if rx is not None and rx.records:
        if not profile.is_video_user:
            raise ModelError(f"idle helper {profile.user_id} cannot receive segments")
        value = total_value(rx, profile)
        loss_q = qdeg_loss(rx, profile)
        loss_r, _ = rebuf_loss(rx, profile)
    if dl is not None and dl.records:
        e_cell = energy_cell(dl, profile, profiles)
        e_wifi = energy_wifi(dl, profile, profiles)
    return WelfareBreakdown(value, loss_q, loss_r, e_cell, e_wifi)


def welfare_breakdowns(
    downloads: dict[int, DownloadSequence],
    profiles: dict[int, UserProfile],
    receives: dict[int, ReceiveSequence] | None = None,
) -> dict[int, WelfareBreakdown]:
    """Per-user breakdowns; receive sequences are derived when not supplied."""
    derived = derive_receive_sequences(downloads, profiles)
    if receives is not None:
        for owner, rx in receives.items():
            if not rx.records:
                continue
            want = derived.get(owner)
            if want is None or [r for r in want.records] != [r for r in rx.records]:
                raise ModelError(
                    f"receive sequence of user {owner} does not match the downloads"
                )
    return {
        uid: user_welfare(downloads.get(uid), derived.get(uid), prof, profiles)
        for uid, prof in sorted(profiles.items())
    }


def social_welfare(
    downloads: dict[int, DownloadSequence],
    profiles: dict[int, UserProfile],
    receives: dict[int, ReceiveSequence] | None = None,
) -> float:
    """Sum of per-user welfare over everyone in `profiles`."""
    parts = welfare_breakdowns(downloads, profiles, receives)
    return sum(b.welfare for b in parts.values())


def decision_welfare(
    decider: UserProfile,
    owner: UserProfile,
    level: int,
    capacity: float,
    owner_buffer: float,
    owner_last_bitrate: float | None,
    bystanders: list[tuple[UserProfile, float]],
) -> float:
    """Estimated one-step welfare of downloading one segment now.

    `decider` fetches `owner`'s next segment at `level` over a link running
    at `capacity` Mbps.  The estimate charges the decider's energy, credits
    the owner's playback value net of estimated degradation and stall, and
    charges every bystander (a playing, unfinished video user co-located
    with the decider, passed as (profile, buffer)) for the stall the
    download time would inflict.
    """
    if capacity <= 0.0:
        raise ModelError("decision_welfare requires positive capacity")
    rate = owner.ladder.rate(level)
    volume = segment_volume(owner, level)
    dl_time = volume / capacity

    cost = decider.c_time * dl_time + decider.c_data * volume
    if owner.user_id != decider.user_id:
        cost += decider.w_data * volume

    gain = quality_value(owner.theta, rate) * owner.segment_len
    if owner_last_bitrate is not None:
        gain -= owner.phi_qdeg * max(owner_last_bitrate - rate, 0.0)
    gain -= owner.phi_rebuf * max(dl_time - owner_buffer, 0.0)

    for prof, buf in bystanders:
        if prof.user_id == owner.user_id:
            continue
        gain -= prof.phi_rebuf * max(dl_time - buf, 0.0)
    return gain - cost
